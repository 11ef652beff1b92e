//! Plain-text group specification.
//!
//! ```text
//! # Heisenberg group
//! name heisenberg
//! step 2
//! layer_dims 2 1
//! bracket 1 2 3 1 1
//! ```
//!
//! `bracket i j l num den` means `[X_i, X_j] += (num/den) X_l`, indices one-based.

use num_bigint::BigInt;

use super::{Group, GroupError, StratificationSpec, StructureConstants};
use crate::scalar::Rational;

#[derive(Clone, Debug, PartialEq)]
pub struct GroupSpecFile {
    pub name: Option<String>,
    pub step: usize,
    pub layer_dims: Vec<usize>,
    /// One-based `(i, j, l, c)`.
    pub brackets: Vec<(usize, usize, usize, Rational)>,
}

impl GroupSpecFile {
    pub fn build(&self) -> Result<Group, GroupError> {
        let spec = StratificationSpec::new(self.layer_dims.clone())?;
        let n = spec.dim();
        let zero_based: Vec<_> = self
            .brackets
            .iter()
            .map(|(i, j, l, c)| (i - 1, j - 1, l - 1, c.clone()))
            .collect();
        let sc = StructureConstants::from_brackets(n, &zero_based)?;
        Group::new(self.name.as_deref().unwrap_or("custom"), spec, sc)
    }

    pub fn from_group(g: &Group) -> Self {
        let mut brackets = Vec::new();
        for (l, i, j, c) in g.constants().nonzero() {
            if i < j {
                brackets.push((i + 1, j + 1, l + 1, c));
            }
        }
        GroupSpecFile {
            name: Some(g.name().to_string()),
            step: g.step(),
            layer_dims: g.spec().layer_dims().to_vec(),
            brackets,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(n) = &self.name {
            s.push_str(&format!("name {n}\n"));
        }
        s.push_str(&format!("step {}\n", self.step));
        let dims: Vec<String> = self.layer_dims.iter().map(|d| d.to_string()).collect();
        s.push_str(&format!("layer_dims {}\n", dims.join(" ")));
        for (i, j, l, c) in &self.brackets {
            s.push_str(&format!("bracket {i} {j} {l} {} {}\n", c.numer(), c.denom()));
        }
        s
    }
}

pub fn parse_group_spec(text: &str) -> Result<GroupSpecFile, GroupError> {
    let mut name = None;
    let mut step = None;
    let mut layer_dims: Option<Vec<usize>> = None;
    let mut raw = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let err = |msg: &str| GroupError::Parse { line: line_no, msg: msg.to_string() };
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut toks = body.split_whitespace();
        let key = toks.next().unwrap();
        let rest: Vec<&str> = toks.collect();
        match key {
            "name" => name = Some(rest.join(" ")),
            "step" => {
                let [v] = rest[..] else { return Err(err("`step` takes one integer")) };
                step = Some(v.parse::<usize>().map_err(|_| err("bad step"))?);
            }
            "layer_dims" => {
                let dims: Result<Vec<usize>, _> = rest.iter().map(|t| t.parse::<usize>()).collect();
                let dims = dims.map_err(|_| err("bad layer dimension"))?;
                if dims.is_empty() {
                    return Err(err("`layer_dims` needs at least one entry"));
                }
                layer_dims = Some(dims);
            }
            "bracket" => {
                if rest.len() != 5 {
                    return Err(err("`bracket` takes `i j l num den`"));
                }
                let idx: Result<Vec<usize>, _> = rest[..3].iter().map(|t| t.parse::<usize>()).collect();
                let idx = idx.map_err(|_| err("bad bracket index"))?;
                if idx.iter().any(|&v| v == 0) {
                    return Err(err("bracket indices are one-based"));
                }
                let num: BigInt = rest[3].parse().map_err(|_| err("bad numerator"))?;
                let den: BigInt = rest[4].parse().map_err(|_| err("bad denominator"))?;
                if den == BigInt::from(0) {
                    return Err(err("zero denominator"));
                }
                raw.push((line_no, idx[0], idx[1], idx[2], Rational::new(num, den)));
            }
            other => return Err(err(&format!("unknown field `{other}`"))),
        }
    }
    let layer_dims = layer_dims.ok_or(GroupError::Parse { line: 0, msg: "missing `layer_dims`".into() })?;
    let step = step.unwrap_or(layer_dims.len());
    if step != layer_dims.len() {
        return Err(GroupError::Parse {
            line: 0,
            msg: format!("step {step} but {} layer dimensions", layer_dims.len()),
        });
    }
    let n: usize = layer_dims.iter().sum();
    let mut brackets = Vec::new();
    for (line, i, j, l, c) in raw {
        if i > n || j > n || l > n {
            return Err(GroupError::Parse { line, msg: format!("index exceeds dimension {n}") });
        }
        brackets.push((i, j, l, c));
    }
    Ok(GroupSpecFile { name, step, layer_dims, brackets })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn engel_roundtrips_through_text() {
        let g = Group::engel();
        let f = GroupSpecFile::from_group(&g);
        let back = parse_group_spec(&f.to_text()).unwrap();
        assert_eq!(back, f);
        let h = back.build().unwrap();
        assert_eq!(h.law().correction(), g.law().correction());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = parse_group_spec("step 2\nlayer_dims 2 1\nbracket 1 2 x 1 1\n").unwrap_err();
        assert_eq!(e, GroupError::Parse { line: 3, msg: "bad bracket index".into() });
        let e = parse_group_spec("layer_dims 2 1\nbracket 1 2 3 1 0\n").unwrap_err();
        assert!(matches!(e, GroupError::Parse { line: 2, .. }));
        assert!(parse_group_spec("step 3\nlayer_dims 2 1\n").is_err());
    }

    #[test]
    fn invalid_constants_surface_from_build() {
        // [X1, X2] lands in layer 1.
        let f = parse_group_spec("layer_dims 2 1\nbracket 1 2 1 1 1\n").unwrap();
        assert!(matches!(f.build(), Err(GroupError::GradingViolation { .. })));
        let f = parse_group_spec("layer_dims 2 1\n").unwrap();
        assert!(matches!(f.build(), Err(GroupError::NonGenerating { layer: 1 })));
    }
}
