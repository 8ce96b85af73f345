//! Analytic parameter and MAC counts for calibrators, blocks and networks.
//!
//! MACs cover every conv and FC (`output elements x kernel volume x C_in / groups`)
//! plus batch norm at two per output element (scale and shift). Pooling, ReLU,
//! sigmoid and gating are free.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use num_rational::Ratio;

use crate::backbone::{BlockSpec, BlockStyle, CalibratorChoice, Model, NetworkSpec, SiteSpec};
use crate::calib::calibrator::{GE_DEPTH, SE_REDUCTION};
use crate::calib::{CalibratorKind, GcConfig};
use crate::error::{config_err, Result};
use crate::ops::PoolAxes;
use crate::param::Parameters;
use crate::real::Real;

/// MACs charged per batch-norm output element.
pub const BN_MACS_PER_ELEMENT: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountingMode {
    /// Weights only: biases and batch norm omitted.
    Paper,
    /// Every learned scalar of the built module.
    Full,
}

impl fmt::Display for CountingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CountingMode::Paper => "paper",
            CountingMode::Full => "full",
        })
    }
}

/// Weight coefficient of each ECal in units of `(pC)^2 / 16`.
fn ecal_coefficient(kind: CalibratorKind) -> Result<u64> {
    match kind {
        CalibratorKind::EcalG => Ok(1),
        CalibratorKind::EcalS => Ok(9),
        CalibratorKind::EcalT | CalibratorKind::EcalL => Ok(3),
        other => Err(config_err!("{other} is not an ECal")),
    }
}

fn chunk_size(p: Ratio<usize>, c: usize) -> Result<u64> {
    if p > Ratio::from_integer(1) {
        return Err(config_err!("partition ratio {p} must lie in [0, 1]"));
    }
    let pc = p * c;
    if !pc.is_integer() || !pc.to_integer().is_multiple_of(4) {
        return Err(config_err!("p * C = {p} * {c} is not divisible by 4"));
    }
    Ok(pc.to_integer() as u64 / 4)
}

/// Parameters of one ECal calibrating `pC/4` channels of a width-`c` block.
pub fn ecal_param_count(kind: CalibratorKind, p: Ratio<usize>, c: usize, mode: CountingMode) -> Result<u64> {
    let g = chunk_size(p, c)?;
    let weights = ecal_coefficient(kind)? * g * g;
    Ok(match mode {
        CountingMode::Paper => weights,
        CountingMode::Full => weights + g + 2 * g,
    })
}

/// All four ECals of one GC site; `p^2 C^2` in paper mode.
pub fn gc_param_count(p: Ratio<usize>, c: usize, mode: CountingMode) -> Result<u64> {
    CalibratorKind::ECALS.iter().map(|&k| ecal_param_count(k, p, c, mode)).sum()
}

/// Parameters of one bottleneck block.
///
/// Paper mode counts the three conv kernels only, so a non-projecting TSN
/// block comes to `17 C^2`. Full mode adds batch norm, the projection
/// shortcut and whatever sits at the calibrator site, exactly as built.
pub fn block_param_count(spec: &BlockSpec, mode: CountingMode) -> Result<u64> {
    let rows = block_rows(spec, "", [1, 1, 1])?;
    Ok(match mode {
        CountingMode::Paper => rows
            .iter()
            .filter(|r| matches!(r.name.as_str(), "conv1" | "conv2" | "conv2s" | "conv2t" | "conv3"))
            .map(|r| r.paper_params)
            .sum(),
        CountingMode::Full => rows.iter().map(|r| r.params).sum(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PercentRow {
    pub name: &'static str,
    /// Paper-mode parameters as a percentage of the `17 C^2` TSN block.
    pub percent: f64,
}

/// Share of each ECal, and of the whole GC module, in a TSN block. Independent of `C`.
pub fn percentage_table(p: Ratio<usize>) -> Result<Vec<PercentRow>> {
    if p > Ratio::from_integer(1) {
        return Err(config_err!("partition ratio {p} must lie in [0, 1]"));
    }
    let p2 = (*p.numer() as f64 / *p.denom() as f64).powi(2);
    let pct = |coef: u64| coef as f64 / 16.0 * p2 / 17.0 * 100.0;
    let mut rows = Vec::new();
    for k in CalibratorKind::ECALS {
        rows.push(PercentRow { name: k.name(), percent: pct(ecal_coefficient(k)?) });
    }
    rows.push(PercentRow { name: "total", percent: pct(16) });
    Ok(rows)
}

pub fn render_percentage_table(p: Ratio<usize>) -> Result<String> {
    let mut s = format!("calibrator share of a 17C^2 block, p = {p}\n");
    for r in percentage_table(p)? {
        let _ = writeln!(s, "{:<8} {:>10.6}%  {:>6.2}%", r.name, r.percent, r.percent);
    }
    Ok(s)
}

/// One parameterized layer (or batch norm) of a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCount {
    pub name: String,
    /// Full-mode parameter count.
    pub params: u64,
    /// Weights only.
    pub paper_params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountReport {
    pub per_layer: Vec<LayerCount>,
    pub params: u64,
    pub macs: u64,
    /// `(params, macs)` of the same network with no calibrators.
    pub baseline: Option<(u64, u64)>,
}

impl CountReport {
    fn from_rows(per_layer: Vec<LayerCount>) -> Self {
        let params = per_layer.iter().map(|r| r.params).sum();
        let macs = per_layer.iter().map(|r| r.macs).sum();
        CountReport { per_layer, params, macs, baseline: None }
    }

    /// `(delta params, delta MACs)` relative to the baseline, in percent.
    pub fn overhead(&self) -> Option<(f64, f64)> {
        self.baseline.map(|(bp, bm)| {
            ((self.params as f64 - bp as f64) / bp as f64 * 100.0, (self.macs as f64 - bm as f64) / bm as f64 * 100.0)
        })
    }

    /// Params in millions rounded to 0.1M.
    pub fn params_m(&self) -> f64 {
        round1(self.params as f64 / 1e6)
    }

    /// MACs in billions rounded to 0.1G.
    pub fn macs_g(&self) -> f64 {
        round1(self.macs as f64 / 1e9)
    }

    pub fn to_text(&self) -> String {
        let width = self.per_layer.iter().map(|r| r.name.len()).max().unwrap_or(5).max(8);
        let mut s = format!("{:<width$} {:>12} {:>16}\n", "layer", "params", "MACs (paper: FLOPs)");
        for r in &self.per_layer {
            let _ = writeln!(s, "{:<width$} {:>12} {:>16}", r.name, r.params, r.macs);
        }
        let _ = writeln!(s, "{:<width$} {:>12} {:>16}", "total", self.params, self.macs);
        let _ =
            writeln!(s, "params {} ({:.1}M)  MACs {} ({:.1}G)", self.params, self.params_m(), self.macs, self.macs_g());
        if let (Some((bp, bm)), Some((dp, dm))) = (self.baseline, self.overhead()) {
            let _ = writeln!(
                s,
                "baseline params {bp} ({:.1}M)  MACs {bm} ({:.1}G)",
                round1(bp as f64 / 1e6),
                round1(bm as f64 / 1e9)
            );
            let _ = writeln!(s, "overhead params {dp:+.4}% ({dp:+.1}%)  MACs {dm:+.4}% ({dm:+.1}%)");
        }
        s
    }

    /// `layer,params,macs` rows followed by `total` and, when known, `baseline`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,params,macs\n");
        for r in &self.per_layer {
            let _ = writeln!(s, "{},{},{}", r.name, r.params, r.macs);
        }
        let _ = writeln!(s, "total,{},{}", self.params, self.macs);
        if let Some((bp, bm)) = self.baseline {
            let _ = writeln!(s, "baseline,{bp},{bm}");
        }
        s
    }
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Extents `[T, H, W]` of an activation.
type Dims = [u64; 3];

fn volume(d: Dims) -> u64 {
    d.iter().product()
}

fn conv_out(n: u64, k: u64, stride: u64, pad: u64) -> u64 {
    (n + 2 * pad - k) / stride + 1
}

struct Rows<'a> {
    prefix: &'a str,
    rows: Vec<LayerCount>,
}

impl Rows<'_> {
    fn name(&self, n: &str) -> String {
        crate::param::join(self.prefix, n)
    }

    /// Conv from `cin` to `cout` producing `out` extents.
    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, n: &str, cin: u64, cout: u64, k: [u64; 3], groups: u64, bias: bool, out: Dims) {
        let kv: u64 = k.iter().product();
        let w = kv * cin / groups * cout;
        let b = if bias { cout } else { 0 };
        self.rows.push(LayerCount {
            name: self.name(n),
            params: w + b,
            paper_params: w,
            macs: volume(out) * kv * cin / groups * cout,
        });
    }

    fn fc(&mut self, n: &str, cin: u64, cout: u64, bias: bool) {
        let w = cin * cout;
        let b = if bias { cout } else { 0 };
        self.rows.push(LayerCount { name: self.name(n), params: w + b, paper_params: w, macs: w });
    }

    fn bn(&mut self, n: &str, c: u64, at: Dims) {
        self.rows.push(LayerCount {
            name: self.name(n),
            params: 2 * c,
            paper_params: 0,
            macs: BN_MACS_PER_ELEMENT * volume(at) * c,
        });
    }
}

/// Rows of one calibrator acting on `c` channels of extents `d`.
fn calibrator_rows(rows: &mut Rows<'_>, prefix: &str, kind: CalibratorKind, c: u64, bn: bool, d: Dims) {
    let sub = |n: &str| crate::param::join(prefix, n);
    let ctx = match kind.pool_axes() {
        Some(PoolAxes::Global) => [1, 1, 1],
        Some(PoolAxes::Time) => [1, d[1], d[2]],
        Some(PoolAxes::Space) => [d[0], 1, 1],
        None => d,
    };
    let bn = bn && kind.is_ecal();
    match kind {
        CalibratorKind::EcalG | CalibratorKind::S3dG => {
            rows.fc(&sub("fc"), c, c, true);
            if bn {
                rows.bn(&sub("bn"), c, ctx);
            }
        }
        CalibratorKind::EcalS | CalibratorKind::EcalT | CalibratorKind::EcalL => {
            let k = kind.ecal_kernel().expect("conv ECal").map(|v| v as u64);
            rows.conv(&sub("conv"), c, c, k, 1, true, ctx);
            if bn {
                rows.bn(&sub("bn"), c, ctx);
            }
        }
        CalibratorKind::Se3d => {
            let h = (c / SE_REDUCTION as u64).max(1);
            rows.fc(&sub("fc1"), c, h, true);
            rows.fc(&sub("fc2"), h, c, true);
        }
        CalibratorKind::Ge3dG => {}
        CalibratorKind::Ge3dC => {
            let mut cur = d;
            for i in 0..GE_DEPTH {
                cur = cur.map(|n| conv_out(n, 3, 2, 1));
                rows.conv(&sub(&format!("dw{i}")), c, c, [3, 3, 3], c, false, cur);
            }
        }
    }
}

fn gc_rows(rows: &mut Rows<'_>, cfg: &GcConfig, width: usize, d: Dims) -> Result<()> {
    let g = cfg.geometry(width)?.chunk_size as u64;
    if g == 0 {
        return Ok(());
    }
    for kind in cfg.enabled_kinds() {
        let prefix = format!("gc.{}", kind.name());
        calibrator_rows(rows, &prefix, kind, g, cfg.use_batchnorm, d);
    }
    Ok(())
}

/// Rows of one block whose input has extents `input`, named under `prefix`.
fn block_rows(spec: &BlockSpec, prefix: &str, input: Dims) -> Result<Vec<LayerCount>> {
    spec.validate()?;
    let mut rows = Rows { prefix, rows: Vec::new() };
    let (w, cin, cout, s) = (spec.width as u64, spec.in_channels as u64, spec.out_channels as u64, spec.stride as u64);
    let out = [input[0], conv_out(input[1], 3, s, 1), conv_out(input[2], 3, s, 1)];
    rows.conv("conv1", cin, w, [1, 1, 1], 1, false, input);
    rows.bn("bn1", w, input);
    match spec.style {
        BlockStyle::Tsn | BlockStyle::Tsm => rows.conv("conv2", w, w, [1, 3, 3], 1, false, out),
        BlockStyle::Gst => {
            let (cs, ct) = spec.gst_split();
            rows.conv("conv2s", cs as u64, cs as u64, [1, 3, 3], 1, false, out);
            rows.conv("conv2t", ct as u64, ct as u64, [3, 3, 3], 1, false, out);
        }
    }
    match &spec.site {
        SiteSpec::None => {}
        SiteSpec::Gc { cfg, .. } => gc_rows(&mut rows, cfg, spec.width, out)?,
        SiteSpec::Comparison(kind) if !spec.site_on_output() => {
            let prefix = kind.name();
            calibrator_rows(&mut rows, prefix, *kind, w, false, out);
        }
        SiteSpec::Comparison(_) => {}
    }
    rows.bn("bn2", w, out);
    rows.conv("conv3", w, cout, [1, 1, 1], 1, false, out);
    rows.bn("bn3", cout, out);
    if let SiteSpec::Comparison(kind) = &spec.site {
        if spec.site_on_output() {
            let prefix = kind.name();
            calibrator_rows(&mut rows, prefix, *kind, cout, false, out);
        }
    }
    if spec.has_projection() {
        rows.conv("downsample.conv", cin, cout, [1, 1, 1], 1, false, out);
        rows.bn("downsample.bn", cout, out);
    }
    Ok(rows.rows)
}

fn network_rows(spec: &NetworkSpec) -> Result<Vec<LayerCount>> {
    spec.validate()?;
    let t = spec.frames as u64;
    let k = spec.stem.kernel as u64;
    let r = spec.resolution as u64;
    let conv = conv_out(r, k, spec.stem.stride as u64, k / 2);
    let c0 = spec.stem.out_channels as u64;
    let mut rows = Rows { prefix: "", rows: Vec::new() };
    rows.conv("stem.conv", spec.in_channels as u64, c0, [1, k, k], 1, false, [t, conv, conv]);
    rows.bn("stem.bn", c0, [t, conv, conv]);
    let mut rows = rows.rows;
    let side = spec.stem_output_size() as u64;
    let mut d = [t, side, side];
    for (i, b) in spec.block_specs()?.iter().enumerate() {
        let block = block_rows(b, &format!("blocks.{i}"), d)?;
        rows.extend(block);
        d = [d[0], conv_out(d[1], 3, b.stride as u64, 1), conv_out(d[2], 3, b.stride as u64, 1)];
    }
    let mut head = Rows { prefix: "", rows: Vec::new() };
    head.fc("fc", spec.final_channels() as u64, spec.num_classes as u64, true);
    rows.extend(head.rows);
    Ok(rows)
}

/// Full-mode parameters and MACs of a one-clip forward pass, with the
/// uncalibrated baseline attached when `spec` has calibrators.
pub fn model_count(spec: &NetworkSpec) -> Result<CountReport> {
    let mut report = CountReport::from_rows(network_rows(spec)?);
    if spec.calibrator != CalibratorChoice::None {
        let base = CountReport::from_rows(network_rows(&spec.baseline())?);
        report.baseline = Some((base.params, base.macs));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub layer: String,
    pub analytic: u64,
    pub enumerated: u64,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: analytic {} vs enumerated {}", self.layer, self.analytic, self.enumerated)
    }
}

/// Learned parameter elements of `model`, grouped by layer (name minus the last component).
pub fn enumerate_layers<F: Real>(model: &Model<F>) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    model.visit("", &mut |name, p| {
        if p.is_learned() {
            let layer = name.rsplit_once('.').map_or(name, |(l, _)| l);
            *out.entry(layer.to_string()).or_insert(0) += p.len() as u64;
        }
    });
    out
}

/// Compares the report against the built model layer by layer; every
/// disagreement is returned, including layers present on one side only.
pub fn verify_against_enumeration<F: Real>(model: &Model<F>, report: &CountReport) -> Result<(), Vec<Mismatch>> {
    let mut enumerated = enumerate_layers(model);
    let mut bad = Vec::new();
    for r in &report.per_layer {
        let e = enumerated.remove(&r.name).unwrap_or(0);
        if e != r.params {
            bad.push(Mismatch { layer: r.name.clone(), analytic: r.params, enumerated: e });
        }
    }
    for (layer, e) in enumerated {
        bad.push(Mismatch { layer, analytic: 0, enumerated: e });
    }
    let sum: u64 = report.per_layer.iter().map(|r| r.params).sum();
    if sum != report.params {
        bad.push(Mismatch { layer: "total".into(), analytic: report.params, enumerated: sum });
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(bad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::Placement;

    fn r(n: usize, d: usize) -> Ratio<usize> {
        Ratio::new(n, d)
    }

    #[test]
    fn ecal_counts_by_hand() {
        assert_eq!(ecal_param_count(CalibratorKind::EcalG, r(1, 1), 64, CountingMode::Paper).unwrap(), 256);
        assert_eq!(ecal_param_count(CalibratorKind::EcalS, r(1, 1), 64, CountingMode::Paper).unwrap(), 2304);
        assert_eq!(gc_param_count(r(1, 2), 64, CountingMode::Paper).unwrap(), 1024);
        // 16 weights + 4 bias + 8 bn
        assert_eq!(ecal_param_count(CalibratorKind::EcalG, r(1, 1), 16, CountingMode::Full).unwrap(), 28);
        assert!(ecal_param_count(CalibratorKind::EcalG, r(1, 3), 64, CountingMode::Paper).is_err());
        assert!(ecal_param_count(CalibratorKind::Se3d, r(1, 1), 64, CountingMode::Paper).is_err());
    }

    #[test]
    fn tsn_block_is_17_c_squared() {
        let spec = BlockSpec {
            style: BlockStyle::Tsn,
            width: 64,
            in_channels: 256,
            out_channels: 256,
            stride: 1,
            site: SiteSpec::None,
            shift_ratio: r(1, 8),
        };
        assert_eq!(block_param_count(&spec, CountingMode::Paper).unwrap(), 69632);
        let gst = BlockSpec { style: BlockStyle::Gst, ..spec };
        assert_eq!(block_param_count(&gst, CountingMode::Paper).unwrap(), 8 * 4096 + 27648);
    }

    #[test]
    fn csv_totals_match_rows() {
        let spec = NetworkSpec::micro(BlockStyle::Tsn).with_gc(r(1, 1), Placement::Standard).unwrap();
        let rep = model_count(&spec).unwrap();
        let csv = rep.to_csv();
        let body: u64 = csv
            .lines()
            .skip(1)
            .take(rep.per_layer.len())
            .map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(body, rep.params);
        assert!(csv.contains(&format!("total,{},{}", rep.params, rep.macs)));
    }

    #[test]
    fn enumeration_agrees_and_names_corruption() {
        let spec = NetworkSpec::micro(BlockStyle::Gst).with_gc(r(1, 2), Placement::Loop).unwrap();
        let model = Model::<f32>::zeros(&spec).unwrap();
        let mut rep = model_count(&spec).unwrap();
        verify_against_enumeration(&model, &rep).unwrap();
        rep.per_layer[5].params += 1;
        rep.params += 1;
        let bad = verify_against_enumeration(&model, &rep).unwrap_err();
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].layer, rep.per_layer[5].name);
    }
}
