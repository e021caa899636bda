//! Three-axis extents, always ordered depth, height, width.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

macro_rules! dims3 {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
        pub struct $name {
            pub d: usize,
            pub h: usize,
            pub w: usize,
        }

        impl $name {
            pub const fn new(d: usize, h: usize, w: usize) -> Self {
                $name { d, h, w }
            }

            pub const fn cube(n: usize) -> Self {
                $name { d: n, h: n, w: n }
            }

            pub const fn volume(&self) -> usize {
                self.d * self.h * self.w
            }

            pub const fn as_array(&self) -> [usize; 3] {
                [self.d, self.h, self.w]
            }

            pub const fn from_array(a: [usize; 3]) -> Self {
                $name { d: a[0], h: a[1], w: a[2] }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}x{}x{}", self.d, self.h, self.w)
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                parse_triple(s).map($name::from_array)
            }
        }
    };
}

dims3!(
    /// Patch counts of a feature map.
    GridDims
);
dims3!(
    /// Patches per attention unit.
    UnitDims
);
dims3!(
    /// Sampling stride of a dilated (global) unit.
    DilationDims
);
dims3!(
    /// Voxel extents of an input volume.
    VoxelDims
);
dims3!(
    /// Voxels per patch.
    PatchDims
);
dims3!(
    /// Depthwise convolution kernel extents.
    KernelDims
);

pub const AXIS_NAMES: [&str; 3] = ["depth", "height", "width"];

/// Parses `DxHxW` (whitespace tolerated) into three positive extents.
pub fn parse_triple(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.trim().split(['x', 'X', '×']).map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Parameter(format!("expected DxHxW, got {s:?}")));
    }
    let mut out = [0usize; 3];
    for (slot, p) in out.iter_mut().zip(&parts) {
        *slot = p
            .parse()
            .map_err(|_| Error::Parameter(format!("bad extent {p:?} in {s:?}")))?;
        if *slot == 0 {
            return Err(Error::Parameter(format!("zero extent in {s:?}")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display_round_trip() {
        let g: GridDims = "4x2 x 3".parse().unwrap();
        assert_eq!(g, GridDims::new(4, 2, 3));
        assert_eq!(g.to_string(), "4x2x3");
        assert_eq!(g.volume(), 24);
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!("4x2".parse::<GridDims>().is_err());
        assert!("4x0x2".parse::<GridDims>().is_err());
        assert!("axbxc".parse::<GridDims>().is_err());
    }
}
