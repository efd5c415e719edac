use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{DataView, HardLabels};
use crate::rng;

/// `Π = (1 - δ)/K² 11ᵀ + δ/K I`: uniform margins, with `δ` interpolating
/// between independent (`δ = 0`) and identical (`δ = 1`) clusterings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingDesign {
    pub k: usize,
    pub delta: f64,
}

impl CouplingDesign {
    pub fn new(k: usize, delta: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter {
                name: "k",
                message: "must be positive".into(),
            });
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::InvalidParameter {
                name: "delta",
                message: format!("must lie in [0, 1], got {delta}"),
            });
        }
        Ok(Self { k, delta })
    }

    pub fn joint(&self) -> DMatrix<f64> {
        let k = self.k as f64;
        let off = (1.0 - self.delta) / (k * k);
        DMatrix::from_fn(self.k, self.k, |a, b| off + if a == b { self.delta / k } else { 0.0 })
    }
}

/// Latent label pairs drawn i.i.d. from the cells of `Π`.
pub fn sample_latent_pairs<R: Rng>(design: &CouplingDesign, n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let joint = design.joint();
    let k = design.k;
    let weights: Vec<f64> = (0..k * k).map(|c| joint[(c / k, c % k)]).collect();
    let dist = WeightedIndex::new(&weights).expect("design weights are valid");
    (0..n)
        .map(|_| {
            let c = dist.sample(rng);
            (c / k, c % k)
        })
        .collect()
}

/// The fixed mean configurations used in the simulation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MeanCatalog {
    #[serde(rename = "K6_P10")]
    K6P10,
    #[serde(rename = "K3_P10")]
    K3P10,
    #[serde(rename = "K3_P100")]
    K3P100,
    #[serde(rename = "K6_P100")]
    K6P100,
    #[serde(rename = "META_CHOICE1")]
    MetaChoice1,
    #[serde(rename = "META_CHOICE2")]
    MetaChoice2,
    #[serde(rename = "EQUIDISTANT_K3_P2")]
    EquidistantK3P2,
}

impl MeanCatalog {
    pub const ALL: [MeanCatalog; 7] = [
        Self::K6P10,
        Self::K3P10,
        Self::K3P100,
        Self::K6P100,
        Self::MetaChoice1,
        Self::MetaChoice2,
        Self::EquidistantK3P2,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Self::K6P10 => "K6_P10",
            Self::K3P10 => "K3_P10",
            Self::K3P100 => "K3_P100",
            Self::K6P100 => "K6_P100",
            Self::MetaChoice1 => "META_CHOICE1",
            Self::MetaChoice2 => "META_CHOICE2",
            Self::EquidistantK3P2 => "EQUIDISTANT_K3_P2",
        }
    }

    pub fn k(self) -> usize {
        match self {
            Self::K6P10 | Self::K6P100 => 6,
            Self::MetaChoice1 | Self::MetaChoice2 => 4,
            Self::K3P10 | Self::K3P100 | Self::EquidistantK3P2 => 3,
        }
    }

    pub fn p(self) -> usize {
        match self {
            Self::K6P10 | Self::K3P10 => 10,
            Self::K3P100 | Self::K6P100 => 100,
            Self::MetaChoice1 | Self::MetaChoice2 | Self::EquidistantK3P2 => 2,
        }
    }

    /// `K x p` mean matrix of view 1; row `k` is component `k`.
    pub fn mu1(self) -> DMatrix<f64> {
        match self {
            Self::K6P10 | Self::K3P10 => block_means(&VIEW1_BLOCKS[..self.k()], 5, 5),
            Self::K3P100 | Self::K6P100 => block_means(&VIEW1_BLOCKS[..self.k()], 50, 50),
            Self::MetaChoice1 | Self::MetaChoice2 => columns(&[&[2.0, 2.0, -2.0, -2.0], &[-2.0, -1.0, 1.0, 2.0]]),
            Self::EquidistantK3P2 => columns(&[&[0.0, 0.0, 12f64.sqrt()], &[2.0, -2.0, 0.0]]),
        }
    }

    /// `K x p` mean matrix of view 2.
    pub fn mu2(self) -> DMatrix<f64> {
        match self {
            Self::K6P10 | Self::K3P10 => split_block_means(self.k(), 6, 4),
            Self::K3P100 | Self::K6P100 => split_block_means(self.k(), 60, 40),
            Self::MetaChoice1 => columns(&[&[-2.0, -2.0, 2.0, 2.0], &[-2.0, -1.0, 1.0, 2.0]]),
            Self::MetaChoice2 => columns(&[&[2.0, -2.0, -2.0, 2.0], &[2.0, -2.0, -1.0, 1.0]]),
            Self::EquidistantK3P2 => columns(&[&[-2.0, 0.0, 2.0], &[0.0, 12f64.sqrt(), 0.0]]),
        }
    }
}

impl fmt::Display for MeanCatalog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for MeanCatalog {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.id().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown design `{s}`"))
    }
}

/// View 1 components as (top block value, bottom block value).
const VIEW1_BLOCKS: [(f64, f64); 6] = [(2.0, 0.0), (0.0, 2.0), (2.0, -2.0), (-2.0, 0.0), (0.0, -2.0), (-2.0, 2.0)];

fn block_means(blocks: &[(f64, f64)], top: usize, bottom: usize) -> DMatrix<f64> {
    DMatrix::from_fn(blocks.len(), top + bottom, |k, j| if j < top { blocks[k].0 } else { blocks[k].1 })
}

/// View 2 uses a `big`/`small` split for the first three components and the
/// mirrored `small`/`big` split for the last two.
fn split_block_means(k: usize, big: usize, small: usize) -> DMatrix<f64> {
    let p = big + small;
    let comps: [(usize, f64, f64); 6] = [
        (big, -2.0, 0.0),
        (big, 0.0, -2.0),
        (big, -2.0, 2.0),
        (big, 2.0, 0.0),
        (small, 0.0, 2.0),
        (small, 2.0, -2.0),
    ];
    DMatrix::from_fn(k, p, |c, j| {
        let (cut, a, b) = comps[c];
        if j < cut {
            a
        } else {
            b
        }
    })
}

/// Builds a `K x p` matrix from the rows of a `p x K` display.
fn columns(display: &[&[f64]]) -> DMatrix<f64> {
    let p = display.len();
    let k = display[0].len();
    DMatrix::from_fn(k, p, |c, j| display[j][c])
}

/// Component distribution for one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComponentFamily {
    /// `N(μ, σ² I)`; `sigma = 0` puts every point on its mean.
    GaussianSpherical { sigma: f64 },
    /// `N(μ, Σ)` with `Σ` given row-major.
    GaussianShared { cov: Vec<f64> },
    /// Multivariate t with location `μ`, scale `Σ` (row-major) and `nu`
    /// degrees of freedom.
    StudentT { scale: Vec<f64>, nu: f64 },
}

impl ComponentFamily {
    /// The dense shared covariance `[[2.25, 0.5], [0.5, 2.25]]`.
    pub fn correlated_2d() -> Self {
        Self::GaussianShared {
            cov: vec![2.25, 0.5, 0.5, 2.25],
        }
    }

    /// The diagonal covariance `diag(2.25, 4)`.
    pub fn diagonal_2d() -> Self {
        Self::GaussianShared { cov: vec![2.25, 0.0, 0.0, 4.0] }
    }

    /// Student t with the correlated 2-D scale matrix.
    pub fn student_t_2d(nu: f64) -> Self {
        Self::StudentT {
            scale: vec![2.25, 0.5, 0.5, 2.25],
            nu,
        }
    }

    /// Lower Cholesky factor of the covariance or scale matrix, or `None`
    /// for the degenerate `sigma = 0` case.
    fn factor(&self, p: usize) -> Result<Option<DMatrix<f64>>> {
        let dense = |v: &[f64], name: &'static str| -> Result<Option<DMatrix<f64>>> {
            if v.len() != p * p {
                return Err(Error::DimensionMismatch {
                    expected: p * p,
                    found: v.len(),
                });
            }
            let m = DMatrix::from_row_slice(p, p, v);
            if (&m - m.transpose()).abs().max() > 1e-12 {
                return Err(Error::InvalidParameter {
                    name,
                    message: "must be symmetric".into(),
                });
            }
            m.cholesky().map(|c| Some(c.l())).ok_or(Error::InvalidParameter {
                name,
                message: "must be positive definite".into(),
            })
        };
        match self {
            Self::GaussianSpherical { sigma } => {
                if !(*sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidParameter {
                        name: "sigma",
                        message: "must be finite and nonnegative".into(),
                    });
                }
                Ok((*sigma > 0.0).then(|| DMatrix::identity(p, p) * *sigma))
            }
            Self::GaussianShared { cov } => dense(cov, "cov"),
            Self::StudentT { scale, nu } => {
                if !(*nu > 0.0 && nu.is_finite()) {
                    return Err(Error::InvalidParameter {
                        name: "nu",
                        message: "must be positive".into(),
                    });
                }
                dense(scale, "scale")
            }
        }
    }
}

/// Everything needed to generate one two-view dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub coupling: CouplingDesign,
    pub means: MeanCatalog,
    pub family1: ComponentFamily,
    pub family2: ComponentFamily,
    pub n: usize,
    pub seed: u64,
}

impl SimDesign {
    /// Spherical Gaussian components with the same `sigma` in both views.
    pub fn spherical(means: MeanCatalog, delta: f64, sigma: f64, n: usize, seed: u64) -> Result<Self> {
        let family = ComponentFamily::GaussianSpherical { sigma };
        Ok(Self {
            coupling: CouplingDesign::new(means.k(), delta)?,
            means,
            family1: family.clone(),
            family2: family,
            n,
            seed,
        })
    }
}

/// A generated dataset with its true labels (for diagnostics only).
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub view1: DataView,
    pub view2: DataView,
    pub labels1: HardLabels,
    pub labels2: HardLabels,
}

/// Draws the latent pairs, then each view given its labels, all from one
/// stream of `design.seed`.
pub fn sample_views(design: &SimDesign) -> Result<SimulatedData> {
    let k = design.means.k();
    if design.coupling.k != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: design.coupling.k,
        });
    }
    let mut rng = rng::stream(design.seed, 0);
    let pairs = sample_latent_pairs(&design.coupling, design.n, &mut rng);
    let z1: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let z2: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let x1 = draw_view(&design.means.mu1(), &design.family1, &z1, &mut rng)?;
    let x2 = draw_view(&design.means.mu2(), &design.family2, &z2, &mut rng)?;
    Ok(SimulatedData {
        view1: DataView::new(x1, "view1")?,
        view2: DataView::new(x2, "view2")?,
        labels1: HardLabels::new(z1, k),
        labels2: HardLabels::new(z2, k),
    })
}

/// `n x p` draws with row `i` from component `z[i]`.
pub fn draw_view<R: Rng>(
    means: &DMatrix<f64>,
    family: &ComponentFamily,
    z: &[usize],
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = means.ncols();
    let factor = family.factor(p)?;
    let chi = match family {
        ComponentFamily::StudentT { nu, .. } => Some((ChiSquared::new(*nu).expect("nu checked"), *nu)),
        _ => None,
    };
    let mut x = DMatrix::zeros(z.len(), p);
    for (i, &c) in z.iter().enumerate() {
        let mut row: DVector<f64> = means.row(c).transpose();
        if let Some(l) = &factor {
            let eps = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
            let mut noise = l * eps;
            if let Some((dist, nu)) = &chi {
                let w: f64 = dist.sample(rng);
                noise *= (nu / w).sqrt();
            }
            row += noise;
        }
        x.set_row(i, &row.transpose());
    }
    Ok(x)
}
