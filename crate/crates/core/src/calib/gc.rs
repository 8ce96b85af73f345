//! The group-contextualization module: ECal-G/S/T/L applied to disjoint
//! channel chunks, with standard or loop chunk placement.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rand::Rng;

use crate::calib::calibrator::{calibrate, calibrate_backward, CalibratorCache, CalibratorSpec};
use crate::calib::CalibratorKind;
use crate::error::{config_err, dim_err, Error, Result};
use crate::ops::{concat_channels, split_channels, Mode};
use crate::param::{join, Param, Parameters};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Placement {
    /// Calibrator `k` always owns chunk `k`.
    Standard,
    /// Calibrator `k` owns chunk `(k + site) mod n_chunks`.
    Loop,
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::Standard => "standard",
            Placement::Loop => "loop",
        })
    }
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standard" | "std" => Ok(Placement::Standard),
            "loop" => Ok(Placement::Loop),
            other => Err(config_err!("unknown placement '{other}' (expected standard|loop)")),
        }
    }
}

/// Network-wide settings of every GC site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GcConfig {
    /// Fraction of channels routed to calibration, in `[0, 1]`.
    pub p: Ratio<usize>,
    /// Calibrator owning group slot `k`; `[G, S, T, L]` by default.
    pub group_order: [CalibratorKind; 4],
    /// Which group slots actually run their calibrator; disabled slots pass through.
    pub enabled: [bool; 4],
    pub placement: Placement,
    pub use_batchnorm: bool,
}

/// Chunk layout of one site with `channels` channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkGeometry {
    pub channels: usize,
    /// `p * C / 4`.
    pub chunk_size: usize,
    /// `C / chunk_size` when the chunks tile the channels exactly.
    pub n_chunks: Option<usize>,
}

impl ChunkGeometry {
    pub fn calibrated(&self) -> usize {
        4 * self.chunk_size
    }

    /// Split sizes used to carve the channel axis.
    pub fn split_sizes(&self, placement: Placement) -> Vec<usize> {
        match (placement, self.n_chunks) {
            (Placement::Loop, Some(n)) => vec![self.chunk_size; n],
            _ => {
                let mut v = vec![self.chunk_size; 4];
                if self.channels > self.calibrated() {
                    v.push(self.channels - self.calibrated());
                }
                v
            }
        }
    }
}

impl GcConfig {
    pub fn new(p: Ratio<usize>, placement: Placement) -> Result<Self> {
        let cfg =
            GcConfig { p, group_order: CalibratorKind::ECALS, enabled: [true; 4], placement, use_batchnorm: true };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Only `kind` runs; the other three groups pass through.
    pub fn single(kind: CalibratorKind, p: Ratio<usize>) -> Result<Self> {
        let mut cfg = Self::new(p, Placement::Standard)?;
        let slot =
            cfg.group_order.iter().position(|&k| k == kind).ok_or_else(|| config_err!("{kind} is not an ECal"))?;
        cfg.enabled = [false; 4];
        cfg.enabled[slot] = true;
        Ok(cfg)
    }

    pub fn with_batchnorm(mut self, on: bool) -> Self {
        self.use_batchnorm = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.p > Ratio::from_integer(1) {
            return Err(config_err!("partition ratio {} must lie in [0, 1]", self.p));
        }
        let mut seen = self.group_order.to_vec();
        seen.sort();
        seen.dedup();
        if seen.len() != 4 || !self.group_order.iter().all(|k| k.is_ecal()) {
            return Err(config_err!("group order {:?} is not a permutation of G,S,T,L", self.group_order));
        }
        if self.placement == Placement::Loop {
            self.n_chunks()?;
        }
        Ok(())
    }

    /// `4 / p`; only defined when it is an integer.
    pub fn n_chunks(&self) -> Result<usize> {
        if *self.p.numer() == 0 {
            return Err(config_err!("loop placement needs p > 0"));
        }
        let n = Ratio::from_integer(4) / self.p;
        if !n.is_integer() {
            return Err(config_err!("loop placement needs 4/p to be an integer, p = {}", self.p));
        }
        Ok(n.to_integer())
    }

    pub fn geometry(&self, channels: usize) -> Result<ChunkGeometry> {
        let calibrated = self.p * channels;
        if !calibrated.is_integer() || !calibrated.to_integer().is_multiple_of(4) {
            return Err(config_err!("p * C = {} * {channels} is not divisible by 4", self.p));
        }
        let chunk_size = calibrated.to_integer() / 4;
        let n_chunks = (chunk_size > 0 && channels.is_multiple_of(chunk_size)).then(|| channels / chunk_size);
        if self.placement == Placement::Loop && n_chunks != Some(self.n_chunks()?) {
            return Err(config_err!("chunks of {chunk_size} do not tile {channels} channels"));
        }
        Ok(ChunkGeometry { channels, chunk_size, n_chunks })
    }

    pub fn enabled_kinds(&self) -> impl Iterator<Item = CalibratorKind> + '_ {
        self.group_order.iter().zip(self.enabled).filter(|(_, on)| *on).map(|(k, _)| *k)
    }

    /// Compact label such as `GSTL` or `S`.
    pub fn label(&self) -> String {
        self.enabled_kinds().filter_map(|k| k.letter()).collect()
    }
}

/// Chunk owned by each calibrator slot at GC site `block_index`.
///
/// `block_index` counts GC sites in network order across all stages.
pub fn chunk_assignment(cfg: &GcConfig, block_index: usize) -> Result<[(CalibratorKind, usize); 4]> {
    let n = match cfg.placement {
        Placement::Standard => None,
        Placement::Loop => Some(cfg.n_chunks()?),
    };
    let assignment: [(CalibratorKind, usize); 4] = std::array::from_fn(|k| {
        let chunk = match n {
            None => k,
            Some(n) => (k + block_index) % n,
        };
        (cfg.group_order[k], chunk)
    });
    let mut chunks: Vec<_> = assignment.iter().map(|a| a.1).collect();
    chunks.sort_unstable();
    chunks.dedup();
    if chunks.len() != 4 {
        return Err(Error::Invariant(format!("calibrators collide on a chunk: {assignment:?}")));
    }
    Ok(assignment)
}

/// One GC site: parameters for every enabled calibrator plus forward caches.
#[derive(Debug, Clone)]
pub struct GcModule<F> {
    pub cfg: GcConfig,
    pub geometry: ChunkGeometry,
    pub site_index: usize,
    /// `(slot, spec)` for each enabled slot, in slot order.
    pub calibrators: Vec<(usize, CalibratorSpec<F>)>,
    caches: Vec<CalibratorCache<F>>,
}

impl<F: Real> GcModule<F> {
    /// Builds the site with zero calibrator weights.
    pub fn new(cfg: &GcConfig, channels: usize, site_index: usize) -> Result<Self> {
        cfg.validate()?;
        let geometry = cfg.geometry(channels)?;
        let mut calibrators = Vec::new();
        if geometry.chunk_size > 0 {
            for (slot, (&kind, &on)) in cfg.group_order.iter().zip(&cfg.enabled).enumerate() {
                if on {
                    calibrators.push((slot, CalibratorSpec::zeros(kind, geometry.chunk_size, cfg.use_batchnorm)?));
                }
            }
        }
        Ok(GcModule { cfg: cfg.clone(), geometry, site_index, calibrators, caches: Vec::new() })
    }

    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (_, spec) in &mut self.calibrators {
            spec.init(rng);
        }
    }

    /// `(kind, chunk index)` for every enabled calibrator at this site.
    pub fn assignment(&self) -> Result<Vec<(CalibratorKind, usize)>> {
        let all = chunk_assignment(&self.cfg, self.site_index)?;
        Ok(self.calibrators.iter().map(|(slot, _)| all[*slot]).collect())
    }

    pub fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Result<Tensor<F>> {
        if x.shape().c() != self.geometry.channels {
            return Err(dim_err!("GC site expects {} channels, got {}", self.geometry.channels, x.shape().c()));
        }
        self.caches.clear();
        if self.calibrators.is_empty() {
            return Ok(x.clone());
        }
        let assignment = self.assignment()?;
        let mut parts = split_channels(x, &self.geometry.split_sizes(self.cfg.placement))?;
        for ((_, spec), &(_, chunk)) in self.calibrators.iter_mut().zip(&assignment) {
            let (y, cache) = calibrate(&parts[chunk], spec, mode)?;
            parts[chunk] = y;
            self.caches.push(cache);
        }
        concat_channels(&parts)
    }

    pub fn backward(&mut self, grad: &Tensor<F>) -> Result<Tensor<F>> {
        if self.calibrators.is_empty() {
            return Ok(grad.clone());
        }
        if self.caches.len() != self.calibrators.len() {
            return Err(Error::Invariant("GC backward called without a matching forward".into()));
        }
        let assignment = self.assignment()?;
        let mut parts = split_channels(grad, &self.geometry.split_sizes(self.cfg.placement))?;
        for (((_, spec), cache), &(_, chunk)) in self.calibrators.iter_mut().zip(&self.caches).zip(&assignment) {
            parts[chunk] = calibrate_backward(&parts[chunk], spec, cache)?;
        }
        concat_channels(&parts)
    }

    /// Caches of the most recent forward pass, one per enabled calibrator.
    pub fn caches(&self) -> &[CalibratorCache<F>] {
        &self.caches
    }

    /// Per-sample mean gate logit of each enabled calibrator from the last forward pass.
    pub fn gate_logit_means(&self) -> Vec<(CalibratorKind, Vec<f64>)> {
        self.calibrators.iter().zip(&self.caches).map(|((_, s), c)| (s.kind, c.logit_means())).collect()
    }

    pub fn zero_weights(&mut self) {
        for (_, spec) in &mut self.calibrators {
            spec.zero_weights();
        }
    }
}

impl<F: Real> Parameters<F> for GcModule<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        for (_, spec) in &self.calibrators {
            spec.visit(&join(prefix, spec.kind.name()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        for (_, spec) in &mut self.calibrators {
            let name = join(prefix, spec.kind.name());
            spec.visit_mut(&name, f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn r(n: usize, d: usize) -> Ratio<usize> {
        Ratio::new(n, d)
    }

    #[test]
    fn standard_assignment_is_fixed() {
        let cfg = GcConfig::new(r(1, 2), Placement::Standard).unwrap();
        for b in [0, 1, 7, 15] {
            let a = chunk_assignment(&cfg, b).unwrap();
            let chunks: Vec<_> = a.iter().map(|x| x.1).collect();
            assert_eq!(chunks, vec![0, 1, 2, 3]);
            assert_eq!(a[0].0, CalibratorKind::EcalG);
            assert_eq!(a[3].0, CalibratorKind::EcalL);
        }
    }

    #[test]
    fn loop_rotates_by_one() {
        let cfg = GcConfig::new(r(1, 1), Placement::Loop).unwrap();
        let chunks: Vec<_> = chunk_assignment(&cfg, 1).unwrap().iter().map(|x| x.1).collect();
        assert_eq!(chunks, vec![1, 2, 3, 0]);
        let half = GcConfig::new(r(1, 2), Placement::Loop).unwrap();
        assert_eq!(chunk_assignment(&half, 8).unwrap(), chunk_assignment(&half, 0).unwrap());
    }

    #[test]
    fn divisibility_and_loop_tiling() {
        let cfg = GcConfig::new(r(1, 2), Placement::Standard).unwrap();
        assert!(cfg.geometry(12).is_err());
        assert_eq!(cfg.geometry(16).unwrap().chunk_size, 2);
        assert!(GcConfig::new(r(3, 4), Placement::Loop).is_err());
        let std = GcConfig::new(r(3, 4), Placement::Standard).unwrap();
        assert_eq!(std.geometry(16).unwrap().split_sizes(Placement::Standard), vec![3, 3, 3, 3, 4]);
    }

    #[test]
    fn half_partition_passes_tail_through() {
        let cfg = GcConfig::new(r(1, 2), Placement::Standard).unwrap();
        let mut gc = GcModule::<f64>::new(&cfg, 8, 0).unwrap();
        let x = Tensor::from_fn(Shape::new(2, 3, 2, 2, 8), |i| (i.iter().sum::<usize>() as f64).sin());
        let y = gc.forward(&x, Mode::Eval).unwrap();
        for n in 0..2 {
            for t in 0..3 {
                for c in 0..8 {
                    let (a, b) = (y.at(n, t, 1, 0, c), x.at(n, t, 1, 0, c));
                    if c < 4 {
                        assert_eq!(a, b / 2.0);
                    } else {
                        assert_eq!(a.to_bits(), b.to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn zero_partition_is_identity() {
        let cfg = GcConfig::new(r(0, 1), Placement::Standard).unwrap();
        let mut gc = GcModule::<f64>::new(&cfg, 8, 3).unwrap();
        let x = Tensor::from_fn(Shape::new(1, 2, 2, 2, 8), |i| i[4] as f64 - 0.5);
        assert_eq!(gc.forward(&x, Mode::Eval).unwrap(), x);
    }
}
