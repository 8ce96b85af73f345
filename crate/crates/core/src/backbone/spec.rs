//! Network description and its flat `key=value` text form.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;

use crate::backbone::block::{BlockSpec, BlockStyle, SiteSpec, EXPANSION};
use crate::calib::{CalibratorKind, GcConfig, Placement};
use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Depth {
    /// ResNet-50: 3, 4, 6, 3 bottlenecks with widths 64..512.
    Fifty,
    /// Three single-block stages of widths 16, 32, 64 for the toy benchmark.
    Micro,
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Depth::Fifty => "50",
            Depth::Micro => "micro",
        })
    }
}

impl FromStr for Depth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "50" | "resnet50" => Ok(Depth::Fifty),
            "micro" => Ok(Depth::Micro),
            other => Err(config_err!("unknown depth '{other}' (expected 50|micro)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StemSpec {
    pub out_channels: usize,
    /// Square spatial kernel of the `1 x k x k` stem conv.
    pub kernel: usize,
    pub stride: usize,
    /// `1x3x3` stride-2 max pool after the stem.
    pub max_pool: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSpec {
    pub blocks: usize,
    pub width: usize,
    /// Spatial stride of the first block in the stage.
    pub stride: usize,
}

/// What the calibrator sites hold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CalibratorChoice {
    None,
    Gc(GcConfig),
    Comparison(CalibratorKind),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub style: BlockStyle,
    pub depth: Depth,
    pub in_channels: usize,
    pub stem: StemSpec,
    pub stages: Vec<StageSpec>,
    pub calibrator: CalibratorChoice,
    /// Stage `i` carries calibrator sites when `insertion_mask[i]` is set.
    pub insertion_mask: [bool; 4],
    pub frames: usize,
    pub resolution: usize,
    pub num_classes: usize,
    /// TSM shift proportion per direction.
    pub shift_ratio: Ratio<usize>,
}

impl NetworkSpec {
    pub fn resnet50(style: BlockStyle) -> Self {
        NetworkSpec {
            style,
            depth: Depth::Fifty,
            in_channels: 3,
            stem: StemSpec { out_channels: 64, kernel: 7, stride: 2, max_pool: true },
            stages: [(3, 64, 1), (4, 128, 2), (6, 256, 2), (3, 512, 2)]
                .into_iter()
                .map(|(blocks, width, stride)| StageSpec { blocks, width, stride })
                .collect(),
            calibrator: CalibratorChoice::None,
            insertion_mask: [true; 4],
            frames: 8,
            resolution: 224,
            num_classes: 174,
            shift_ratio: Ratio::new(1, 8),
        }
    }

    pub fn micro(style: BlockStyle) -> Self {
        NetworkSpec {
            style,
            depth: Depth::Micro,
            in_channels: 1,
            stem: StemSpec { out_channels: 16, kernel: 3, stride: 2, max_pool: false },
            stages: [(1, 16, 1), (1, 32, 2), (1, 64, 2)]
                .into_iter()
                .map(|(blocks, width, stride)| StageSpec { blocks, width, stride })
                .collect(),
            calibrator: CalibratorChoice::None,
            insertion_mask: [true; 4],
            frames: 8,
            resolution: 32,
            num_classes: 8,
            shift_ratio: Ratio::new(1, 8),
        }
    }

    pub fn for_depth(depth: Depth, style: BlockStyle) -> Self {
        match depth {
            Depth::Fifty => Self::resnet50(style),
            Depth::Micro => Self::micro(style),
        }
    }

    pub fn with_calibrator(mut self, c: CalibratorChoice) -> Self {
        self.calibrator = c;
        self
    }

    /// GC with all four ECals; `p = 0` means no calibrators.
    pub fn with_gc(self, p: Ratio<usize>, placement: Placement) -> Result<Self> {
        if *p.numer() == 0 {
            return Ok(self.with_calibrator(CalibratorChoice::None));
        }
        let bn = self.style.default_calibrator_bn();
        let cfg = GcConfig::new(p, placement)?.with_batchnorm(bn);
        Ok(self.with_calibrator(CalibratorChoice::Gc(cfg)))
    }

    pub fn with_mask(mut self, mask: [bool; 4]) -> Self {
        self.insertion_mask = mask;
        self
    }

    pub fn baseline(&self) -> Self {
        Self { calibrator: CalibratorChoice::None, ..self.clone() }
    }

    pub fn gc_config(&self) -> Option<&GcConfig> {
        match &self.calibrator {
            CalibratorChoice::Gc(cfg) => Some(cfg),
            _ => None,
        }
    }

    pub fn final_channels(&self) -> usize {
        self.stages.last().map_or(self.stem.out_channels, |s| EXPANSION * s.width)
    }

    /// Spatial size after the stem (conv plus optional max pool).
    pub fn stem_output_size(&self) -> usize {
        let k = self.stem.kernel;
        let conv = (self.resolution + 2 * (k / 2) - k) / self.stem.stride + 1;
        if self.stem.max_pool {
            (conv + 2 - 3) / 2 + 1
        } else {
            conv
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(config_err!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.stages.is_empty() || self.stages.len() > 4 {
            return Err(config_err!("expected 1..=4 stages, got {}", self.stages.len()));
        }
        if self.frames == 0 || self.in_channels == 0 {
            return Err(config_err!("frames and input channels must be positive"));
        }
        if self.stem.kernel.is_multiple_of(2) || self.stem.stride == 0 {
            return Err(config_err!("stem kernel must be odd and stride positive"));
        }
        if self.resolution < self.stem.kernel / 2 + 1 {
            return Err(config_err!("resolution {} too small", self.resolution));
        }
        if let CalibratorChoice::Gc(cfg) = &self.calibrator {
            cfg.validate()?;
        }
        if let CalibratorChoice::Comparison(kind) = self.calibrator {
            if kind.is_ecal() {
                return Err(config_err!("{kind} is an ECal; use a GC config instead"));
            }
        }
        self.block_specs().map(|_| ())
    }

    /// Every block in network order, with calibrator sites assigned by the
    /// insertion mask and GC site indices counted globally.
    pub fn block_specs(&self) -> Result<Vec<BlockSpec>> {
        let mut out = Vec::new();
        let mut in_channels = self.stem.out_channels;
        let mut site_index = 0;
        for (si, stage) in self.stages.iter().enumerate() {
            for b in 0..stage.blocks {
                let site = if !self.insertion_mask[si] {
                    SiteSpec::None
                } else {
                    match &self.calibrator {
                        CalibratorChoice::None => SiteSpec::None,
                        CalibratorChoice::Gc(cfg) => {
                            cfg.geometry(stage.width)?;
                            site_index += 1;
                            SiteSpec::Gc { cfg: cfg.clone(), site_index: site_index - 1 }
                        }
                        CalibratorChoice::Comparison(kind) => SiteSpec::Comparison(*kind),
                    }
                };
                let spec = BlockSpec {
                    style: self.style,
                    width: stage.width,
                    in_channels,
                    out_channels: EXPANSION * stage.width,
                    stride: if b == 0 { stage.stride } else { 1 },
                    site,
                    shift_ratio: self.shift_ratio,
                };
                spec.validate()?;
                in_channels = spec.out_channels;
                out.push(spec);
            }
        }
        Ok(out)
    }

    /// Number of GC sites in the network.
    pub fn gc_sites(&self) -> usize {
        self.block_specs().map(|v| v.iter().filter(|b| matches!(b.site, SiteSpec::Gc { .. })).count()).unwrap_or(0)
    }

    /// Parses the flat `key=value` form; keys may be separated by whitespace,
    /// newlines or commas, and `#` starts a comment.
    ///
    /// Keys: `style`, `depth`, `p`, `placement`, `mask`, `frames`, `classes`,
    /// `resolution`, and optionally `calibrators` (subset of `GSTL`), `compare`
    /// (a comparison calibrator), `bn` (`on|off`), `channels`, `shift`.
    pub fn parse_config(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("");
            for tok in line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
                let (k, v) = tok.split_once('=').ok_or_else(|| config_err!("expected key=value, got '{tok}'"))?;
                if kv.insert(k.trim().to_ascii_lowercase(), v.trim().to_string()).is_some() {
                    return Err(config_err!("duplicate key '{k}'"));
                }
            }
        }
        let take = |kv: &mut BTreeMap<String, String>, k: &str| kv.remove(k);
        let style: BlockStyle = take(&mut kv, "style").as_deref().unwrap_or("tsn").parse()?;
        let depth: Depth = take(&mut kv, "depth").as_deref().unwrap_or("50").parse()?;
        let mut spec = Self::for_depth(depth, style);
        let p = take(&mut kv, "p").map(|s| parse_ratio(&s)).transpose()?.unwrap_or(Ratio::from_integer(0));
        let placement: Placement = take(&mut kv, "placement").as_deref().unwrap_or("standard").parse()?;
        if let Some(m) = take(&mut kv, "mask") {
            spec.insertion_mask = parse_mask(&m)?;
        }
        let num = |kv: &mut BTreeMap<String, String>, k: &str| -> Result<Option<usize>> {
            kv.remove(k)
                .map(|v| v.parse::<usize>().map_err(|_| config_err!("{k} must be a non-negative integer, got '{v}'")))
                .transpose()
        };
        if let Some(v) = num(&mut kv, "frames")? {
            spec.frames = v;
        }
        if let Some(v) = num(&mut kv, "classes")? {
            spec.num_classes = v;
        }
        if let Some(v) = num(&mut kv, "resolution")? {
            spec.resolution = v;
        }
        if let Some(v) = num(&mut kv, "channels")? {
            spec.in_channels = v;
        }
        if let Some(v) = take(&mut kv, "shift") {
            spec.shift_ratio = parse_ratio(&v)?;
        }
        let bn = match take(&mut kv, "bn").as_deref() {
            None => style.default_calibrator_bn(),
            Some("on" | "1" | "true") => true,
            Some("off" | "0" | "false") => false,
            Some(other) => return Err(config_err!("bn must be on|off, got '{other}'")),
        };
        let letters = take(&mut kv, "calibrators");
        let compare = take(&mut kv, "compare");
        if let Some(k) = kv.keys().next() {
            return Err(config_err!("unknown config key '{k}'"));
        }
        spec.calibrator = match compare {
            Some(c) => {
                if *p.numer() != 0 || letters.is_some() {
                    return Err(config_err!("compare= cannot be combined with p or calibrators"));
                }
                CalibratorChoice::Comparison(c.parse()?)
            }
            None if *p.numer() == 0 => CalibratorChoice::None,
            None => {
                let mut cfg = GcConfig::new(p, placement)?.with_batchnorm(bn);
                if let Some(l) = letters {
                    cfg.enabled = [false; 4];
                    for ch in l.chars() {
                        let kind = CalibratorKind::from_letter(ch)
                            .ok_or_else(|| config_err!("unknown calibrator letter '{ch}'"))?;
                        let slot = cfg.group_order.iter().position(|&k| k == kind).unwrap_or(0);
                        cfg.enabled[slot] = true;
                    }
                }
                CalibratorChoice::Gc(cfg)
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Inverse of [`NetworkSpec::parse_config`].
    pub fn to_config(&self) -> String {
        let mask: String = self.insertion_mask.iter().map(|&b| if b { '1' } else { '0' }).collect();
        let mut s = format!(
            "style={} depth={} mask={} frames={} classes={} resolution={} channels={} shift={}",
            self.style,
            self.depth,
            mask,
            self.frames,
            self.num_classes,
            self.resolution,
            self.in_channels,
            self.shift_ratio
        );
        match &self.calibrator {
            CalibratorChoice::None => s.push_str(" p=0"),
            CalibratorChoice::Gc(cfg) => {
                let label = cfg.label();
                s.push_str(&format!(
                    " p={} placement={} bn={}",
                    cfg.p,
                    cfg.placement,
                    if cfg.use_batchnorm { "on" } else { "off" }
                ));
                if label != "GSTL" {
                    s.push_str(&format!(" calibrators={label}"));
                }
            }
            CalibratorChoice::Comparison(k) => s.push_str(&format!(" compare={k}")),
        }
        s
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_config())
    }
}

/// Parses `1`, `1/2`, `0.25` into an exact ratio.
pub fn parse_ratio(s: &str) -> Result<Ratio<usize>> {
    let s = s.trim();
    if let Ok(r) = s.parse::<Ratio<usize>>() {
        return Ok(r);
    }
    let (int, frac) = s.split_once('.').ok_or_else(|| config_err!("cannot parse ratio '{s}'"))?;
    let bad = || config_err!("cannot parse ratio '{s}'");
    if frac.is_empty() || frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let int: usize = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
    let den = 10usize.pow(frac.len() as u32);
    let num: usize = frac.parse().map_err(|_| bad())?;
    Ok(Ratio::new(int * den + num, den))
}

/// Parses a 4-character `0/1` stage mask such as `0010`.
pub fn parse_mask(s: &str) -> Result<[bool; 4]> {
    let s = s.trim();
    if s.len() != 4 {
        return Err(config_err!("mask must have 4 digits, got '{s}'"));
    }
    let mut m = [false; 4];
    for (i, ch) in s.chars().enumerate() {
        m[i] = match ch {
            '1' => true,
            '0' => false,
            _ => return Err(config_err!("mask digits must be 0 or 1, got '{s}'")),
        };
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_forms() {
        assert_eq!(parse_ratio("1").unwrap(), Ratio::from_integer(1));
        assert_eq!(parse_ratio("1/2").unwrap(), Ratio::new(1, 2));
        assert_eq!(parse_ratio("0.25").unwrap(), Ratio::new(1, 4));
        assert!(parse_ratio("x").is_err());
        assert!(parse_ratio("-1").is_err());
    }

    #[test]
    fn config_round_trip() {
        let text = "style=gst depth=50 p=1/2 placement=loop mask=0110 frames=16 classes=10 resolution=112";
        let spec = NetworkSpec::parse_config(text).unwrap();
        assert_eq!(spec.style, BlockStyle::Gst);
        assert_eq!(spec.insertion_mask, [false, true, true, false]);
        assert!(!spec.gc_config().unwrap().use_batchnorm);
        let again = NetworkSpec::parse_config(&spec.to_config()).unwrap();
        assert_eq!(spec, again);
    }

    #[test]
    fn site_counts() {
        let all = NetworkSpec::resnet50(BlockStyle::Tsn).with_gc(Ratio::from_integer(1), Placement::Standard).unwrap();
        assert_eq!(all.gc_sites(), 16);
        assert_eq!(all.clone().with_mask([false, false, true, false]).gc_sites(), 6);
        assert_eq!(all.baseline().gc_sites(), 0);
    }

    #[test]
    fn rejects_bad_keys() {
        assert!(NetworkSpec::parse_config("style=tsn bogus=1").is_err());
        assert!(NetworkSpec::parse_config("mask=11").is_err());
        assert!(NetworkSpec::parse_config("classes=1").is_err());
        assert!(NetworkSpec::parse_config("p=1/3").is_err());
    }
}
