//! Residual bottleneck blocks in TSN, TSM and GST styles with an optional
//! calibrator site after the middle convolution.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rand::Rng;

use crate::backbone::layers::{BnLayer, ConvLayer, ReluLayer};
use crate::calib::{
    calibrate, calibrate_backward, CalibratorCache, CalibratorKind, CalibratorSpec, GcConfig, GcModule,
};
use crate::error::{config_err, dim_err, Error, Result};
use crate::ops::{concat_channels, split_channels, temporal_shift, temporal_shift_backward, ConvParams, Mode};
use crate::param::{join, Param, Parameters};
use crate::real::Real;
use crate::tensor::Tensor;

/// Bottleneck expansion factor: `out_channels = 4 * width`.
pub const EXPANSION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockStyle {
    /// Per-frame 2D residual block.
    Tsn,
    /// TSN plus a temporal shift on the block input.
    Tsm,
    /// Middle conv split into a 2D path on `3C/4` and a 3D path on `C/4` channels.
    Gst,
}

impl BlockStyle {
    pub const ALL: [BlockStyle; 3] = [BlockStyle::Tsn, BlockStyle::Tsm, BlockStyle::Gst];

    /// Whether ECals carry batch norm by default for this backbone.
    pub fn default_calibrator_bn(self) -> bool {
        !matches!(self, BlockStyle::Gst)
    }
}

impl fmt::Display for BlockStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockStyle::Tsn => "tsn",
            BlockStyle::Tsm => "tsm",
            BlockStyle::Gst => "gst",
        })
    }
}

impl FromStr for BlockStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tsn" => Ok(BlockStyle::Tsn),
            "tsm" => Ok(BlockStyle::Tsm),
            "gst" => Ok(BlockStyle::Gst),
            other => Err(config_err!("unknown backbone style '{other}' (expected tsn|tsm|gst)")),
        }
    }
}

/// What sits at a block's calibrator site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SiteSpec {
    None,
    /// A GC module; `site_index` counts GC sites in network order.
    Gc {
        cfg: GcConfig,
        site_index: usize,
    },
    /// A full-width comparison calibrator. SE3D sits on the block output
    /// (`4C` channels) as in squeeze-excitation networks; the others follow
    /// the middle conv.
    Comparison(CalibratorKind),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub style: BlockStyle,
    /// Inner channel count `C`.
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Spatial stride of the middle conv and the projection shortcut.
    pub stride: usize,
    pub site: SiteSpec,
    /// TSM shift proportion per direction.
    pub shift_ratio: Ratio<usize>,
}

impl BlockSpec {
    pub fn validate(&self) -> Result<()> {
        if self.out_channels != EXPANSION * self.width {
            return Err(config_err!("bottleneck output {} != 4 x width {}", self.out_channels, self.width));
        }
        if !(1..=2).contains(&self.stride) {
            return Err(config_err!("block stride must be 1 or 2, got {}", self.stride));
        }
        if self.style == BlockStyle::Gst && !self.width.is_multiple_of(4) {
            return Err(config_err!("GST width {} not divisible by 4", self.width));
        }
        Ok(())
    }

    pub fn has_projection(&self) -> bool {
        self.stride != 1 || self.in_channels != self.out_channels
    }

    /// `(spatial, temporal)` channel split of the GST middle conv.
    pub fn gst_split(&self) -> (usize, usize) {
        (3 * self.width / 4, self.width / 4)
    }

    /// Whether the comparison calibrator attaches to the block output.
    pub fn site_on_output(&self) -> bool {
        matches!(self.site, SiteSpec::Comparison(CalibratorKind::Se3d))
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum Middle<F> {
    Single(ConvLayer<F>),
    Gst { spatial: ConvLayer<F>, temporal: ConvLayer<F> },
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Site<F> {
    None,
    Gc(GcModule<F>),
    Single { spec: CalibratorSpec<F>, cache: Option<CalibratorCache<F>> },
}

impl<F: Real> Site<F> {
    fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Result<Tensor<F>> {
        match self {
            Site::None => Ok(x.clone()),
            Site::Gc(gc) => gc.forward(x, mode),
            Site::Single { spec, cache } => {
                let (y, c) = calibrate(x, spec, mode)?;
                *cache = Some(c);
                Ok(y)
            }
        }
    }

    fn backward(&mut self, grad: &Tensor<F>) -> Result<Tensor<F>> {
        match self {
            Site::None => Ok(grad.clone()),
            Site::Gc(gc) => gc.backward(grad),
            Site::Single { spec, cache } => {
                let c = cache.take().ok_or_else(|| Error::Invariant("calibrator backward before forward".into()))?;
                calibrate_backward(grad, spec, &c)
            }
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        match self {
            Site::None => {}
            Site::Gc(gc) => gc.visit(&join(prefix, "gc"), f),
            Site::Single { spec, .. } => spec.visit(&join(prefix, spec.kind.name()), f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        match self {
            Site::None => {}
            Site::Gc(gc) => gc.visit_mut(&join(prefix, "gc"), f),
            Site::Single { spec, .. } => {
                let p = join(prefix, spec.kind.name());
                spec.visit_mut(&p, f)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Bottleneck<F> {
    pub spec: BlockSpec,
    conv1: ConvLayer<F>,
    bn1: BnLayer<F>,
    relu1: ReluLayer<F>,
    middle: Middle<F>,
    pub site: Site<F>,
    bn2: BnLayer<F>,
    relu2: ReluLayer<F>,
    conv3: ConvLayer<F>,
    bn3: BnLayer<F>,
    shortcut: Option<(ConvLayer<F>, BnLayer<F>)>,
    relu_out: ReluLayer<F>,
}

impl<F: Real> Bottleneck<F> {
    /// Builds the block with zero conv kernels; see [`Bottleneck::init`].
    pub fn new(spec: BlockSpec) -> Result<Self> {
        spec.validate()?;
        let w = spec.width;
        let s = spec.stride;
        let pointwise = |cout, cin| ConvLayer::new(ConvParams::zeros(cout, cin, [1, 1, 1], false));
        let middle = match spec.style {
            BlockStyle::Tsn | BlockStyle::Tsm => Middle::Single(ConvLayer::new(
                ConvParams::zeros(w, w, [1, 3, 3], false).with_stride([1, s, s]).with_padding([0, 1, 1]),
            )),
            BlockStyle::Gst => {
                let (cs, ct) = spec.gst_split();
                Middle::Gst {
                    spatial: ConvLayer::new(
                        ConvParams::zeros(cs, cs, [1, 3, 3], false).with_stride([1, s, s]).with_padding([0, 1, 1]),
                    ),
                    temporal: ConvLayer::new(
                        ConvParams::zeros(ct, ct, [3, 3, 3], false).with_stride([1, s, s]).with_padding([1, 1, 1]),
                    ),
                }
            }
        };
        let site = match &spec.site {
            SiteSpec::None => Site::None,
            SiteSpec::Gc { cfg, site_index } => Site::Gc(GcModule::new(cfg, w, *site_index)?),
            SiteSpec::Comparison(kind) => {
                let channels = if spec.site_on_output() { spec.out_channels } else { w };
                Site::Single { spec: CalibratorSpec::zeros(*kind, channels, false)?, cache: None }
            }
        };
        let shortcut = spec.has_projection().then(|| {
            (
                ConvLayer::new(
                    ConvParams::zeros(spec.out_channels, spec.in_channels, [1, 1, 1], false).with_stride([1, s, s]),
                ),
                BnLayer::new(spec.out_channels),
            )
        });
        Ok(Bottleneck {
            conv1: pointwise(w, spec.in_channels),
            bn1: BnLayer::new(w),
            relu1: ReluLayer::default(),
            middle,
            site,
            bn2: BnLayer::new(w),
            relu2: ReluLayer::default(),
            conv3: pointwise(spec.out_channels, w),
            bn3: BnLayer::new(spec.out_channels),
            shortcut,
            relu_out: ReluLayer::default(),
            spec,
        })
    }

    /// He-normal conv kernels and calibrator weights, in a fixed order.
    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.conv1.params.init_he(rng);
        match &mut self.middle {
            Middle::Single(c) => c.params.init_he(rng),
            Middle::Gst { spatial, temporal } => {
                spatial.params.init_he(rng);
                temporal.params.init_he(rng);
            }
        }
        self.conv3.params.init_he(rng);
        if let Some((c, _)) = &mut self.shortcut {
            c.params.init_he(rng);
        }
        match &mut self.site {
            Site::None => {}
            Site::Gc(gc) => gc.init(rng),
            Site::Single { spec, .. } => spec.init(rng),
        }
    }

    fn middle_forward(&mut self, x: &Tensor<F>) -> Result<Tensor<F>> {
        match &mut self.middle {
            Middle::Single(c) => c.forward(x),
            Middle::Gst { spatial, temporal } => {
                let (cs, ct) = self.spec.gst_split();
                let parts = split_channels(x, &[cs, ct])?;
                let a = spatial.forward(&parts[0])?;
                let b = temporal.forward(&parts[1])?;
                concat_channels(&[a, b])
            }
        }
    }

    fn middle_backward(&mut self, grad: &Tensor<F>) -> Result<Tensor<F>> {
        match &mut self.middle {
            Middle::Single(c) => c.backward(grad),
            Middle::Gst { spatial, temporal } => {
                let (cs, ct) = self.spec.gst_split();
                let parts = split_channels(grad, &[cs, ct])?;
                let a = spatial.backward(&parts[0])?;
                let b = temporal.backward(&parts[1])?;
                concat_channels(&[a, b])
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Result<Tensor<F>> {
        if x.shape().c() != self.spec.in_channels {
            return Err(dim_err!("block expects {} channels, got {}", self.spec.in_channels, x.shape().c()));
        }
        let shifted;
        let a = if self.spec.style == BlockStyle::Tsm {
            shifted = temporal_shift(x, self.spec.shift_ratio)?;
            &shifted
        } else {
            x
        };
        let h = self.conv1.forward(a)?;
        let h = self.bn1.forward(&h, mode)?;
        let h = self.relu1.forward(h);
        let h = self.middle_forward(&h)?;
        let out_site = self.spec.site_on_output();
        let h = if out_site { h } else { self.site.forward(&h, mode)? };
        let h = self.bn2.forward(&h, mode)?;
        let h = self.relu2.forward(h);
        let h = self.conv3.forward(&h)?;
        let h = self.bn3.forward(&h, mode)?;
        let mut h = if out_site { self.site.forward(&h, mode)? } else { h };
        let identity = match &mut self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(x)?;
                bn.forward(&s, mode)?
            }
            None => x.clone(),
        };
        if h.shape() != identity.shape() {
            return Err(dim_err!("residual add of {} and {}", h.shape(), identity.shape()));
        }
        h.add_assign(&identity)?;
        Ok(self.relu_out.forward(h))
    }

    pub fn backward(&mut self, grad: &Tensor<F>) -> Result<Tensor<F>> {
        let g = self.relu_out.backward(grad)?;
        let mut dx = match &mut self.shortcut {
            Some((conv, bn)) => {
                let s = bn.backward(&g)?;
                conv.backward(&s)?
            }
            None => g.clone(),
        };
        let out_site = self.spec.site_on_output();
        let h = if out_site { self.site.backward(&g)? } else { g };
        let h = self.bn3.backward(&h)?;
        let h = self.conv3.backward(&h)?;
        let h = self.relu2.backward(&h)?;
        let h = self.bn2.backward(&h)?;
        let h = if out_site { h } else { self.site.backward(&h)? };
        let h = self.middle_backward(&h)?;
        let h = self.relu1.backward(&h)?;
        let h = self.bn1.backward(&h)?;
        let mut h = self.conv1.backward(&h)?;
        if self.spec.style == BlockStyle::Tsm {
            h = temporal_shift_backward(&h, self.spec.shift_ratio)?;
        }
        dx.add_assign(&h)?;
        Ok(dx)
    }

    /// Mutable access to the middle-conv kernels (`[single]` or `[spatial, temporal]`).
    pub fn middle_params_mut(&mut self) -> Vec<&mut ConvParams<F>> {
        match &mut self.middle {
            Middle::Single(c) => vec![&mut c.params],
            Middle::Gst { spatial, temporal } => vec![&mut spatial.params, &mut temporal.params],
        }
    }
}

impl<F: Real> Parameters<F> for Bottleneck<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<F>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        match &self.middle {
            Middle::Single(c) => c.visit(&join(prefix, "conv2"), f),
            Middle::Gst { spatial, temporal } => {
                spatial.visit(&join(prefix, "conv2s"), f);
                temporal.visit(&join(prefix, "conv2t"), f);
            }
        }
        self.site.visit(prefix, f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        self.conv3.visit(&join(prefix, "conv3"), f);
        self.bn3.visit(&join(prefix, "bn3"), f);
        if let Some((c, b)) = &self.shortcut {
            c.visit(&join(prefix, "downsample.conv"), f);
            b.visit(&join(prefix, "downsample.bn"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<F>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        match &mut self.middle {
            Middle::Single(c) => c.visit_mut(&join(prefix, "conv2"), f),
            Middle::Gst { spatial, temporal } => {
                spatial.visit_mut(&join(prefix, "conv2s"), f);
                temporal.visit_mut(&join(prefix, "conv2t"), f);
            }
        }
        self.site.visit_mut(prefix, f);
        self.bn2.visit_mut(&join(prefix, "bn2"), f);
        self.conv3.visit_mut(&join(prefix, "conv3"), f);
        self.bn3.visit_mut(&join(prefix, "bn3"), f);
        if let Some((c, b)) = &mut self.shortcut {
            c.visit_mut(&join(prefix, "downsample.conv"), f);
            b.visit_mut(&join(prefix, "downsample.bn"), f);
        }
    }
}
