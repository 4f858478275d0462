use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Result};

/// Layers spread over the stages when a policy gives none explicitly.
pub const DEFAULT_TOTAL_LAYERS: usize = 12;

/// Sequence of reduction levels with the number of Conformer layers run at
/// each, e.g. `x4-x8-x16-x8` / `3-3-3-3`.
///
/// The first level is the x4 frontend; every later level is exactly twice or
/// half its predecessor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReductionPolicy {
    levels: Vec<usize>,
    layers: Vec<usize>,
}

/// How the sequence moves between two consecutive stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    Down,
    Up,
}

fn policy_err(position: usize, reason: String) -> Error {
    Error::Policy { position, reason }
}

impl ReductionPolicy {
    pub fn new(levels: Vec<usize>, layers: Vec<usize>) -> Result<Self> {
        if levels.is_empty() {
            return Err(policy_err(0, "no reduction levels".into()));
        }
        for (i, &level) in levels.iter().enumerate() {
            if level < 4 || !level.is_power_of_two() {
                return Err(policy_err(i, format!("level x{level} is not a power of two >= 4")));
            }
        }
        if levels[0] != 4 {
            return Err(policy_err(0, format!("first level must be x4, got x{}", levels[0])));
        }
        for (i, pair) in levels.windows(2).enumerate() {
            if pair[1] != pair[0] * 2 && pair[0] != pair[1] * 2 {
                return Err(policy_err(
                    i + 1,
                    format!("x{} -> x{} is not a single x2 step", pair[0], pair[1]),
                ));
            }
        }
        if layers.len() != levels.len() {
            return Err(policy_err(
                levels.len().min(layers.len()),
                format!("{} levels but {} layer counts", levels.len(), layers.len()),
            ));
        }
        if layers.iter().sum::<usize>() == 0 {
            return Err(Error::Config("policy has no Conformer layers".into()));
        }
        Ok(Self { levels, layers })
    }

    /// Parses `x4-x8-x16-x8` (or the `D16-F8` shorthand) with an optional
    /// layer distribution `3-3-3-3`. Without one, [`DEFAULT_TOTAL_LAYERS`]
    /// are distributed by [`Self::default_layers`].
    pub fn parse(levels: &str, layers: Option<&str>) -> Result<Self> {
        let levels = levels.trim();
        let parsed_levels = if levels.starts_with(['D', 'd']) {
            parse_shorthand(levels)?
        } else {
            parse_levels(levels)?
        };
        let parsed_layers = match layers {
            Some(text) => parse_layers(text)?,
            None => Self::default_layers(&parsed_levels, DEFAULT_TOTAL_LAYERS),
        };
        Self::new(parsed_levels, parsed_layers)
    }

    /// Even split of `total` layers; leftovers go to the deepest levels
    /// first, earlier stages winning ties.
    pub fn default_layers(levels: &[usize], total: usize) -> Vec<usize> {
        let n = levels.len();
        let mut layers = alloc::vec![total / n; n];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| levels[b].cmp(&levels[a]).then(a.cmp(&b)));
        for &i in order.iter().take(total % n) {
            layers[i] += 1;
        }
        layers
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn num_stages(&self) -> usize {
        self.levels.len()
    }

    pub fn total_layers(&self) -> usize {
        self.layers.iter().sum()
    }

    /// Largest level reached anywhere.
    pub fn reduction_depth(&self) -> usize {
        *self.levels.iter().max().expect("non-empty")
    }

    /// Level of the last stage; fixes the CTC output rate.
    pub fn final_reduction(&self) -> usize {
        *self.levels.last().expect("non-empty")
    }

    /// Transition entering stage `i` (for `i >= 1`).
    pub fn transition(&self, i: usize) -> Transition {
        if self.levels[i] > self.levels[i - 1] {
            Transition::Down
        } else {
            Transition::Up
        }
    }

    pub fn num_downsamples(&self) -> usize {
        (1..self.levels.len())
            .filter(|&i| self.transition(i) == Transition::Down)
            .count()
    }

    pub fn levels_text(&self) -> String {
        join(self.levels.iter().map(|l| format!("x{l}")))
    }

    pub fn layers_text(&self) -> String {
        join(self.layers.iter().map(|l| format!("{l}")))
    }
}

impl fmt::Display for ReductionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {}", self.levels_text(), self.layers_text())
    }
}

fn join(items: impl Iterator<Item = String>) -> String {
    items.collect::<Vec<_>>().join("-")
}

fn parse_levels(text: &str) -> Result<Vec<usize>> {
    text.split('-')
        .enumerate()
        .map(|(i, tok)| {
            let tok = tok.trim();
            tok.strip_prefix(['x', 'X'])
                .and_then(|n| n.parse::<usize>().ok())
                .ok_or_else(|| policy_err(i, format!("expected a level like x8, got '{tok}'")))
        })
        .collect()
}

fn parse_layers(text: &str) -> Result<Vec<usize>> {
    text.split('-')
        .enumerate()
        .map(|(i, tok)| {
            tok.trim()
                .parse::<usize>()
                .map_err(|_| policy_err(i, format!("expected a layer count, got '{}'", tok.trim())))
        })
        .collect()
}

/// `D<depth>-F<final>`: descend from x4 to the depth, then ascend to the final level.
fn parse_shorthand(text: &str) -> Result<Vec<usize>> {
    let (d, f) = text
        .split_once('-')
        .ok_or_else(|| policy_err(0, format!("expected D<depth>-F<final>, got '{text}'")))?;
    let value = |tok: &str, prefix: [char; 2], pos: usize| {
        tok.trim()
            .strip_prefix(prefix)
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n >= 4 && n.is_power_of_two())
            .ok_or_else(|| policy_err(pos, format!("bad shorthand component '{tok}'")))
    };
    let depth = value(d, ['D', 'd'], 0)?;
    let last = value(f, ['F', 'f'], 1)?;
    if last > depth {
        return Err(policy_err(1, format!("final reduction x{last} exceeds depth x{depth}")));
    }
    let mut levels = alloc::vec![4];
    while *levels.last().unwrap() < depth {
        levels.push(levels.last().unwrap() * 2);
    }
    while *levels.last().unwrap() > last {
        levels.push(levels.last().unwrap() / 2);
    }
    Ok(levels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(p: &ReductionPolicy) -> (&[usize], &[usize]) {
        (p.levels(), p.layers())
    }

    #[test]
    fn parses_uconv_d16_f8_v1() {
        let p = ReductionPolicy::parse("x4-x8-x16-x8", Some("3-3-3-3")).unwrap();
        assert_eq!(lv(&p), (&[4, 8, 16, 8][..], &[3, 3, 3, 3][..]));
        assert_eq!(p.reduction_depth(), 16);
        assert_eq!(p.final_reduction(), 8);
        assert_eq!(p.num_downsamples(), 2);
    }

    #[test]
    fn parses_conformer_s() {
        let p = ReductionPolicy::parse("x4", Some("12")).unwrap();
        assert_eq!(lv(&p), (&[4][..], &[12][..]));
        assert_eq!(p.reduction_depth(), 4);
    }

    #[test]
    fn rejects_double_jump_with_position() {
        let err = ReductionPolicy::parse("x4-x16", Some("6-6")).unwrap_err();
        assert!(matches!(err, Error::Policy { position: 1, .. }), "{err}");
    }

    #[test]
    fn rejects_bad_levels() {
        assert!(matches!(
            ReductionPolicy::parse("x4-x12", Some("6-6")),
            Err(Error::Policy { position: 1, .. })
        ));
        assert!(matches!(
            ReductionPolicy::parse("x8-x16", Some("6-6")),
            Err(Error::Policy { position: 0, .. })
        ));
        assert!(matches!(
            ReductionPolicy::parse("x4-x8", Some("3-3-3")),
            Err(Error::Policy { .. })
        ));
        assert!(matches!(
            ReductionPolicy::parse("x4-y8", Some("3-3")),
            Err(Error::Policy { position: 1, .. })
        ));
    }

    #[test]
    fn shorthand_expands_levels() {
        let p = ReductionPolicy::parse("D16-F8", None).unwrap();
        assert_eq!(lv(&p), (&[4, 8, 16, 8][..], &[3, 3, 3, 3][..]));
        let p = ReductionPolicy::parse("D8-F4", None).unwrap();
        assert_eq!(lv(&p), (&[4, 8, 4][..], &[4, 4, 4][..]));
        let p = ReductionPolicy::parse("D16-F4", None).unwrap();
        assert_eq!(p.levels(), &[4, 8, 16, 8, 4]);
        // 12 = 5·2 + 2: the x16 stage, then the descending x8 stage get the extras.
        assert_eq!(p.layers(), &[2, 3, 3, 2, 2]);
        let p = ReductionPolicy::parse("D32-F8", Some("2-2-2-2-2-2")).unwrap();
        assert_eq!(p.levels(), &[4, 8, 16, 32, 16, 8]);
        assert!(ReductionPolicy::parse("D8-F16", None).is_err());
    }

    #[test]
    fn display_round_trips() {
        let p = ReductionPolicy::parse("x4-x8-x16-x8", Some("2-4-5-1")).unwrap();
        let again = ReductionPolicy::parse(&p.levels_text(), Some(&p.layers_text())).unwrap();
        assert_eq!(p, again);
        assert_eq!(alloc::format!("{p}"), "x4-x8-x16-x8 / 2-4-5-1");
    }
}
