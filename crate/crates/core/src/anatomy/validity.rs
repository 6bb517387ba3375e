use std::fmt;

use serde::{Serialize, Serializer};

use super::{Class, LabelMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    NoLv,
    NoMyo,
    LvNotEnclosed,
    MultiComponent(Class),
    HoleInMyo,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoLv => f.write_str("NO_LV"),
            Violation::NoMyo => f.write_str("NO_MYO"),
            Violation::LvNotEnclosed => f.write_str("LV_NOT_ENCLOSED"),
            Violation::MultiComponent(c) => write!(f, "MULTI_COMPONENT_{}", c.name()),
            Violation::HoleInMyo => f.write_str("HOLE_IN_MYO"),
        }
    }
}

impl Serialize for Violation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidityReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn codes(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }
}

const NEIGHBOURS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

fn neighbour(map: &LabelMap, idx: usize, (dr, dc): (isize, isize)) -> Option<usize> {
    let (r, c) = ((idx / map.width) as isize + dr, (idx % map.width) as isize + dc);
    (r >= 0 && c >= 0 && (r as usize) < map.height && (c as usize) < map.width)
        .then(|| r as usize * map.width + c as usize)
}

/// 4-connected components of `class`; each entry lists its pixel indices.
pub(super) fn components(map: &LabelMap, class: Class) -> Vec<Vec<usize>> {
    let id = class.id();
    let mut seen = vec![false; map.data.len()];
    let mut out = Vec::new();
    for start in 0..map.data.len() {
        if seen[start] || map.data[start] != id {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut head = 0;
        while head < comp.len() {
            let p = comp[head];
            head += 1;
            for d in NEIGHBOURS {
                if let Some(q) = neighbour(map, p, d) {
                    if !seen[q] && map.data[q] == id {
                        seen[q] = true;
                        comp.push(q);
                    }
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Runs the anatomical predicates in a fixed order and reports every failure.
///
/// Out-of-frame cells count as background, so an LV touching the border is
/// not enclosed and a background region touching the border is never a hole.
pub fn check_validity(map: &LabelMap) -> ValidityReport {
    let mut violations = Vec::new();
    let (lv, myo) = (Class::Lv.id(), Class::Myo.id());
    let has_lv = map.data.contains(&lv);
    if !has_lv {
        violations.push(Violation::NoLv);
    }
    if !map.data.contains(&myo) {
        violations.push(Violation::NoMyo);
    }
    if has_lv {
        let open = map.data.iter().enumerate().filter(|(_, &c)| c == lv).any(|(i, _)| {
            NEIGHBOURS.iter().any(|&d| match neighbour(map, i, d) {
                Some(q) => map.data[q] != lv && map.data[q] != myo,
                None => true,
            })
        });
        if open {
            violations.push(Violation::LvNotEnclosed);
        }
    }
    for class in Class::FOREGROUND {
        if components(map, class).len() > 1 {
            violations.push(Violation::MultiComponent(class));
        }
    }
    let hole = components(map, Class::Background).iter().any(|comp| {
        let mut bounded_by_myo_only = true;
        for &p in comp {
            for d in NEIGHBOURS {
                match neighbour(map, p, d) {
                    None => return false,
                    Some(q) if map.data[q] != Class::Background.id() && map.data[q] != myo => {
                        bounded_by_myo_only = false
                    }
                    _ => {}
                }
            }
        }
        bounded_by_myo_only
    });
    if hole {
        violations.push(Violation::HoleInMyo);
    }
    ValidityReport {
        valid: violations.is_empty(),
        violations,
    }
}
