//! Capacity matching between single-level and hierarchical models: equal
//! continuous latent budgets and equal discrete codebook budgets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Latent geometry and codebook of a single-level model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SingleBudget {
    pub grid_h: usize,
    pub grid_w: usize,
    pub latent_channels: usize,
    pub codebook_size: usize,
    pub code_dim: usize,
}

/// Latent geometry and per-level codebook of a two-level model. Both
/// levels share `latent_channels`, `codebook_size`, and `code_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierBudget {
    pub bottom_h: usize,
    pub bottom_w: usize,
    pub top_h: usize,
    pub top_w: usize,
    pub latent_channels: usize,
    pub codebook_size: usize,
    pub code_dim: usize,
}

impl SingleBudget {
    /// Continuous budget: latent cells times channels at the quantizer input.
    pub fn continuous(&self) -> usize {
        self.grid_h * self.grid_w * self.latent_channels
    }

    /// Discrete budget: codebook size times code dimension.
    pub fn discrete(&self) -> usize {
        self.codebook_size * self.code_dim
    }
}

impl HierBudget {
    pub fn continuous(&self) -> usize {
        (self.bottom_h * self.bottom_w + self.top_h * self.top_w) * self.latent_channels
    }

    /// Total over both level codebooks.
    pub fn discrete(&self) -> usize {
        2 * self.codebook_size * self.code_dim
    }
}

/// A validated pair of capacity-matched model descriptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub single: SingleBudget,
    pub hier: HierBudget,
}

impl BudgetSpec {
    /// Validate the three matching constraints; error messages name the
    /// violated constraint.
    pub fn new(single: SingleBudget, hier: HierBudget) -> Result<Self> {
        for (name, v) in [
            ("single grid_h", single.grid_h),
            ("single grid_w", single.grid_w),
            ("single latent_channels", single.latent_channels),
            ("single codebook_size", single.codebook_size),
            ("single code_dim", single.code_dim),
            ("hier bottom_h", hier.bottom_h),
            ("hier bottom_w", hier.bottom_w),
            ("hier top_h", hier.top_h),
            ("hier top_w", hier.top_w),
            ("hier latent_channels", hier.latent_channels),
            ("hier codebook_size", hier.codebook_size),
            ("hier code_dim", hier.code_dim),
        ] {
            if v == 0 {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        if single.grid_h * single.grid_w != hier.bottom_h * hier.bottom_w {
            return Err(Error::InfeasibleBudget(format!(
                "spatial constraint violated: single grid {}x{} has {} cells but hier bottom grid {}x{} has {}",
                single.grid_h,
                single.grid_w,
                single.grid_h * single.grid_w,
                hier.bottom_h,
                hier.bottom_w,
                hier.bottom_h * hier.bottom_w
            )));
        }
        if single.continuous() != hier.continuous() {
            return Err(Error::InfeasibleBudget(format!(
                "continuous latent budget mismatch: single H*W*C = {} but hier (Hb*Wb + Ht*Wt)*C = {}",
                single.continuous(),
                hier.continuous()
            )));
        }
        if single.discrete() != hier.discrete() {
            return Err(Error::InfeasibleBudget(format!(
                "discrete codebook budget mismatch: single K*D = {} but hier 2*K*D = {}",
                single.discrete(),
                hier.discrete()
            )));
        }
        Ok(Self { single, hier })
    }
}

/// Derive the capacity-matched single-level configuration from a
/// hierarchical one: the single grid reuses the bottom grid, the channel
/// count balances the continuous budget, and the codebook size balances
/// the discrete budget for the requested code dimension.
pub fn match_budget(hier: HierBudget, single_code_dim: usize) -> Result<BudgetSpec> {
    for (name, v) in [
        ("bottom_h", hier.bottom_h),
        ("bottom_w", hier.bottom_w),
        ("top_h", hier.top_h),
        ("top_w", hier.top_w),
        ("latent_channels", hier.latent_channels),
        ("codebook_size", hier.codebook_size),
        ("code_dim", hier.code_dim),
        ("single code_dim", single_code_dim),
    ] {
        if v == 0 {
            return Err(Error::InvalidInput(format!("{name} must be positive")));
        }
    }
    if hier.bottom_h != 2 * hier.top_h || hier.bottom_w != 2 * hier.top_w {
        return Err(Error::Contract(format!(
            "top grid {}x{} must be exactly half the bottom grid {}x{}",
            hier.top_h, hier.top_w, hier.bottom_h, hier.bottom_w
        )));
    }
    let spatial = hier.bottom_h * hier.bottom_w;
    let continuous = hier.continuous();
    if continuous % spatial != 0 {
        return Err(Error::InfeasibleBudget(format!(
            "continuous latent budget {continuous} is not divisible by the single grid cell count {spatial}; no integer channel count exists"
        )));
    }
    let latent_channels = continuous / spatial;
    let discrete = hier.discrete();
    if discrete % single_code_dim != 0 {
        return Err(Error::InfeasibleBudget(format!(
            "discrete codebook budget {discrete} is not divisible by code dimension {single_code_dim}; no integer codebook size exists"
        )));
    }
    let codebook_size = discrete / single_code_dim;
    BudgetSpec::new(
        SingleBudget {
            grid_h: hier.bottom_h,
            grid_w: hier.bottom_w,
            latent_channels,
            codebook_size,
            code_dim: single_code_dim,
        },
        hier,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_scale_hier(codebook_size: usize, code_dim: usize) -> HierBudget {
        HierBudget {
            bottom_h: 64,
            bottom_w: 64,
            top_h: 32,
            top_w: 32,
            latent_channels: 128,
            codebook_size,
            code_dim,
        }
    }

    #[test]
    fn reference_configuration_gives_160_channels() {
        let spec = match_budget(paper_scale_hier(4096, 8), 8).unwrap();
        assert_eq!(spec.single.latent_channels, 160);
        assert_eq!(64 * 64 * 160, 64 * 64 * 128 + 32 * 32 * 128);
    }

    #[test]
    fn codebook_size_doubles_at_equal_dims() {
        let spec = match_budget(paper_scale_hier(4096, 8), 8).unwrap();
        assert_eq!(spec.single.codebook_size, 8192);
    }

    #[test]
    fn degenerate_top_grid_is_rejected() {
        let mut hier = paper_scale_hier(512, 8);
        hier.top_h = 0;
        hier.top_w = 0;
        assert!(match_budget(hier, 8).is_err());
    }

    #[test]
    fn non_integer_codebook_size_is_infeasible() {
        // 2*K*D = 1024; D_s = 48 does not divide it.
        let err = match_budget(paper_scale_hier(64, 8), 48).unwrap_err();
        match err {
            Error::InfeasibleBudget(msg) => assert!(msg.contains("codebook size"), "{msg}"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn mismatched_budgets_name_the_constraint() {
        let hier = paper_scale_hier(512, 8);
        let bad_discrete = SingleBudget {
            grid_h: 64,
            grid_w: 64,
            latent_channels: 160,
            codebook_size: 512,
            code_dim: 8,
        };
        let err = BudgetSpec::new(bad_discrete, hier).unwrap_err();
        assert!(err.to_string().contains("discrete codebook budget"), "{err}");

        let bad_continuous = SingleBudget {
            grid_h: 64,
            grid_w: 64,
            latent_channels: 100,
            codebook_size: 1024,
            code_dim: 8,
        };
        let err = BudgetSpec::new(bad_continuous, hier).unwrap_err();
        assert!(err.to_string().contains("continuous latent budget"), "{err}");

        let bad_spatial = SingleBudget {
            grid_h: 32,
            grid_w: 64,
            latent_channels: 320,
            codebook_size: 1024,
            code_dim: 8,
        };
        let err = BudgetSpec::new(bad_spatial, hier).unwrap_err();
        assert!(err.to_string().contains("spatial constraint"), "{err}");
    }
}
