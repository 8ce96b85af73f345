use std::fmt;
use std::str::FromStr;

use crate::error::{config_err, Error};
use crate::ops::PoolAxes;

/// Every calibrator this crate can build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CalibratorKind {
    /// Global pooling over `(T, H, W)`, square FC.
    EcalG,
    /// Pooling over `T`, `1x3x3` conv.
    EcalS,
    /// Pooling over `(H, W)`, `3x1x1` conv.
    EcalT,
    /// No pooling, `3x1x1` conv on the full tensor.
    EcalL,
    /// Squeeze-excitation with 3D pooling and a `C -> C/r -> C` bottleneck.
    Se3d,
    /// Parameter-free gather-excite with global pooling.
    Ge3dG,
    /// Gather-excite with three strided depthwise 3D convs.
    Ge3dC,
    /// Feature gating with a square FC on globally pooled features.
    S3dG,
}

impl CalibratorKind {
    pub const ECALS: [CalibratorKind; 4] =
        [CalibratorKind::EcalG, CalibratorKind::EcalS, CalibratorKind::EcalT, CalibratorKind::EcalL];

    pub const COMPARISON: [CalibratorKind; 4] =
        [CalibratorKind::Se3d, CalibratorKind::Ge3dG, CalibratorKind::Ge3dC, CalibratorKind::S3dG];

    pub fn is_ecal(self) -> bool {
        Self::ECALS.contains(&self)
    }

    /// Parameter-path component, e.g. `ecal_s`.
    pub fn name(self) -> &'static str {
        match self {
            CalibratorKind::EcalG => "ecal_g",
            CalibratorKind::EcalS => "ecal_s",
            CalibratorKind::EcalT => "ecal_t",
            CalibratorKind::EcalL => "ecal_l",
            CalibratorKind::Se3d => "se3d",
            CalibratorKind::Ge3dG => "ge3d_g",
            CalibratorKind::Ge3dC => "ge3d_c",
            CalibratorKind::S3dG => "s3d_g",
        }
    }

    /// Single-letter tag of an ECal (`G`, `S`, `T`, `L`).
    pub fn letter(self) -> Option<char> {
        match self {
            CalibratorKind::EcalG => Some('G'),
            CalibratorKind::EcalS => Some('S'),
            CalibratorKind::EcalT => Some('T'),
            CalibratorKind::EcalL => Some('L'),
            _ => None,
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        Self::ECALS.into_iter().find(|k| k.letter() == Some(c.to_ascii_uppercase()))
    }

    /// Axes the ECal context pools over; `None` for ECal-L.
    pub fn pool_axes(self) -> Option<PoolAxes> {
        match self {
            CalibratorKind::EcalG | CalibratorKind::Se3d | CalibratorKind::Ge3dG | CalibratorKind::S3dG => {
                Some(PoolAxes::Global)
            }
            CalibratorKind::EcalS => Some(PoolAxes::Time),
            CalibratorKind::EcalT => Some(PoolAxes::Space),
            CalibratorKind::EcalL | CalibratorKind::Ge3dC => None,
        }
    }

    /// Convolution kernel `(kT, kH, kW)` of the conv-based ECals.
    pub fn ecal_kernel(self) -> Option<[usize; 3]> {
        match self {
            CalibratorKind::EcalS => Some([1, 3, 3]),
            CalibratorKind::EcalT | CalibratorKind::EcalL => Some([3, 1, 1]),
            _ => None,
        }
    }
}

impl fmt::Display for CalibratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CalibratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        [Self::ECALS, Self::COMPARISON]
            .concat()
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| config_err!("unknown calibrator '{s}'"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse_back() {
        for k in [CalibratorKind::ECALS, CalibratorKind::COMPARISON].concat() {
            assert_eq!(k.name().parse::<CalibratorKind>().unwrap(), k);
        }
        assert_eq!("GE3D-C".parse::<CalibratorKind>().unwrap(), CalibratorKind::Ge3dC);
        assert!("nln".parse::<CalibratorKind>().is_err());
    }

    #[test]
    fn letters() {
        let s: String = CalibratorKind::ECALS.iter().map(|k| k.letter().unwrap()).collect();
        assert_eq!(s, "GSTL");
        assert_eq!(CalibratorKind::from_letter('t'), Some(CalibratorKind::EcalT));
    }
}
