use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Spatial support shared by every filter of a bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Footprint {
    /// Centre pixel and its four nearest neighbours.
    Plus5,
    Square3,
    Square5,
}

const PLUS5: [(isize, isize); 5] = [(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)];

impl Footprint {
    pub fn num_taps(self) -> usize {
        match self {
            Footprint::Plus5 => 5,
            Footprint::Square3 => 9,
            Footprint::Square5 => 25,
        }
    }

    /// Side length of the square kernel the footprint lives in.
    pub fn extent(self) -> usize {
        match self {
            Footprint::Plus5 | Footprint::Square3 => 3,
            Footprint::Square5 => 5,
        }
    }

    /// (row, col) offsets of each tap relative to the output pixel, in tap order.
    pub fn offsets(self) -> Vec<(isize, isize)> {
        match self {
            Footprint::Plus5 => PLUS5.to_vec(),
            Footprint::Square3 | Footprint::Square5 => {
                let r = (self.extent() / 2) as isize;
                (-r..=r)
                    .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
                    .collect()
            }
        }
    }

    /// Whether a kernel cell (row, col within `extent × extent`) carries a tap.
    pub fn contains(self, row: usize, col: usize) -> bool {
        let r = (self.extent() / 2) as isize;
        let (dy, dx) = (row as isize - r, col as isize - r);
        match self {
            Footprint::Plus5 => PLUS5.contains(&(dy, dx)),
            _ => row < self.extent() && col < self.extent(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Footprint::Plus5 => "plus5",
            Footprint::Square3 => "square3",
            Footprint::Square5 => "square5",
        }
    }
}

impl fmt::Display for Footprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Footprint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plus5" => Ok(Footprint::Plus5),
            "square3" => Ok(Footprint::Square3),
            "square5" => Ok(Footprint::Square5),
            other => Err(Error::invalid(format!("unknown footprint '{other}'"))),
        }
    }
}
