//! Validity codes by recursive-descent flood fill over coordinate sets.
//! Shares no code with the library's component labelling.

use std::collections::HashSet;

use cardiogen::anatomy::LabelMap;

fn fill(map: &LabelMap, class: u8, r: i64, c: i64, seen: &mut HashSet<(i64, i64)>, out: &mut Vec<(i64, i64)>) {
    if r < 0 || c < 0 || r >= map.height() as i64 || c >= map.width() as i64 {
        return;
    }
    if map.get(r as usize, c as usize) != class || !seen.insert((r, c)) {
        return;
    }
    out.push((r, c));
    fill(map, class, r + 1, c, seen, out);
    fill(map, class, r - 1, c, seen, out);
    fill(map, class, r, c + 1, seen, out);
    fill(map, class, r, c - 1, seen, out);
}

pub fn regions(map: &LabelMap, class: u8) -> Vec<Vec<(i64, i64)>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for r in 0..map.height() as i64 {
        for c in 0..map.width() as i64 {
            if map.get(r as usize, c as usize) == class && !seen.contains(&(r, c)) {
                let mut region = Vec::new();
                fill(map, class, r, c, &mut seen, &mut region);
                out.push(region);
            }
        }
    }
    out
}

fn at(map: &LabelMap, r: i64, c: i64) -> Option<u8> {
    (r >= 0 && c >= 0 && r < map.height() as i64 && c < map.width() as i64).then(|| map.get(r as usize, c as usize))
}

pub fn codes(map: &LabelMap) -> Vec<String> {
    let mut v = Vec::new();
    let lv = regions(map, 3);
    if lv.is_empty() {
        v.push("NO_LV".to_string());
    }
    if regions(map, 2).is_empty() {
        v.push("NO_MYO".to_string());
    }
    let steps = [(0, 1), (0, -1), (1, 0), (-1, 0)];
    let open = lv.iter().flatten().any(|&(r, c)| {
        steps
            .iter()
            .any(|(dr, dc)| !matches!(at(map, r + dr, c + dc), Some(2) | Some(3)))
    });
    if open {
        v.push("LV_NOT_ENCLOSED".to_string());
    }
    for (id, name) in [(1, "RV"), (2, "MYO"), (3, "LV")] {
        if regions(map, id).len() > 1 {
            v.push(format!("MULTI_COMPONENT_{name}"));
        }
    }
    let hole = regions(map, 0).iter().any(|reg| {
        reg.iter().all(|&(r, c)| {
            steps
                .iter()
                .all(|(dr, dc)| matches!(at(map, r + dr, c + dc), Some(0) | Some(2)))
        })
    });
    if hole {
        v.push("HOLE_IN_MYO".to_string());
    }
    v
}
