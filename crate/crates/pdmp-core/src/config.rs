//! Run configuration: flat typed key-value sections, strict about unknown keys.

use crate::error::RunError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    /// spatial dimension, 2 or 3
    pub d: usize,
    /// ball radius
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ParticlesConfig {
    /// particle count N
    pub n: usize,
    /// soft-sphere diameter beta
    pub beta: f64,
    pub v_min: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CollisionKernelConfig {
    /// angular bump support: delta_angle < |<e, w-hat>| < 1 - delta_angle
    pub delta_angle: f64,
    /// minimum relative speed with nonempty impact support
    pub r0: f64,
    /// width of the smooth relative-speed step above r0
    pub rel_width: f64,
    /// amplitude of the |v + v'| modulation factor (cancels under normalization)
    pub sum_amp: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RedistributionConfig {
    /// inward-cone margin: support is <v-hat, n> < -eps_cone
    pub eps_cone: f64,
    /// width of the smooth rise above the cone margin (in the inward cosine)
    pub cone_width: f64,
    /// speed bump support, strictly inside (v_min, v_max)
    pub speed_lo: f64,
    pub speed_hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GammaConfig {
    /// support margin: gamma in (eps_gamma, 1 - eps_gamma)
    pub eps_gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Gaussian position scale
    pub s_x: f64,
    /// initial speed bump support, strictly inside (v_min, v_max)
    pub speed_lo: f64,
    pub speed_hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// horizon; paths are simulated on [0, t_max] and classified at t = t_max
    pub t_max: f64,
    /// cap on total collisions per path
    pub cap_collisions: usize,
    /// cap on total reflections per path
    pub cap_reflections: usize,
    /// absolute tolerance below which two event times abort the path
    pub tie_tol: f64,
    /// rejection sampler budget per draw
    pub rejection_budget: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    pub hemisphere_order: usize,
    pub radial_order: usize,
    pub angular_order: usize,
    pub interval_order: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    /// base finite-difference step for flow derivatives (scaled by coordinate size)
    pub fd_step: f64,
    /// maximum step halvings when the event order changes
    pub max_shrinks: usize,
}

/// All model parameters; everything the physics depends on.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub domain: DomainConfig,
    pub particles: ParticlesConfig,
    pub collision_kernel: CollisionKernelConfig,
    pub redistribution: RedistributionConfig,
    pub gamma: GammaConfig,
    pub initial: InitialConfig,
    pub simulation: SimulationConfig,
    pub quadrature: QuadratureConfig,
    pub flow: FlowConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub n_paths: usize,
    pub seed: u64,
    /// worker threads; 0 means hardware parallelism
    pub workers: usize,
    pub out_dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(flatten)]
    pub model: ModelConfig,
}

impl ModelConfig {
    /// Desk-scale defaults: d = 2, N = 3 soft spheres in the unit disk.
    pub fn default_desk() -> Self {
        ModelConfig {
            domain: DomainConfig { d: 2, radius: 1.0 },
            particles: ParticlesConfig {
                n: 3,
                beta: 0.1,
                v_min: 0.5,
                v_max: 2.0,
            },
            collision_kernel: CollisionKernelConfig {
                delta_angle: 0.1,
                r0: 0.05,
                rel_width: 0.05,
                sum_amp: 0.5,
            },
            redistribution: RedistributionConfig {
                eps_cone: 0.1,
                cone_width: 0.15,
                speed_lo: 0.6,
                speed_hi: 1.8,
            },
            gamma: GammaConfig { eps_gamma: 0.1 },
            initial: InitialConfig {
                s_x: 0.35,
                speed_lo: 0.7,
                speed_hi: 1.7,
            },
            simulation: SimulationConfig {
                t_max: 0.8,
                cap_collisions: 16,
                cap_reflections: 16,
                tie_tol: 1e-12,
                rejection_budget: 100_000,
            },
            quadrature: QuadratureConfig {
                hemisphere_order: 64,
                radial_order: 64,
                angular_order: 128,
                interval_order: 64,
            },
            flow: FlowConfig {
                fd_step: 1e-4,
                max_shrinks: 24,
            },
        }
    }

    pub fn tol_boundary(&self) -> f64 {
        1e-9 * self.domain.radius
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let e = |m: String| Err(RunError::Config(m));
        if self.domain.d != 2 && self.domain.d != 3 {
            return e(format!("domain.d must be 2 or 3, got {}", self.domain.d));
        }
        if self.domain.radius <= 0.0 {
            return e("domain.radius must be positive".into());
        }
        let p = &self.particles;
        if p.n == 0 {
            return e("particles.n must be at least 1".into());
        }
        if !(0.0 <= p.v_min && p.v_min < p.v_max && p.v_max.is_finite()) {
            return e("need 0 <= v_min < v_max < inf".into());
        }
        if p.beta <= 0.0 || p.beta >= self.domain.radius {
            return e("particles.beta must lie in (0, radius)".into());
        }
        let ck = &self.collision_kernel;
        if !(ck.delta_angle > 0.0 && 2.0 * ck.delta_angle < 1.0) {
            return e("collision_kernel.delta_angle must lie in (0, 0.5)".into());
        }
        if ck.r0 <= 0.0 || ck.rel_width <= 0.0 {
            return e("collision_kernel.r0 and rel_width must be positive".into());
        }
        let rd = &self.redistribution;
        if !(rd.eps_cone > 0.0 && rd.eps_cone + rd.cone_width < 1.0) {
            return e("redistribution cone margins must satisfy 0 < eps_cone, eps_cone + cone_width < 1".into());
        }
        if !(p.v_min < rd.speed_lo && rd.speed_lo < rd.speed_hi && rd.speed_hi < p.v_max) {
            return e("redistribution speed bump must sit strictly inside (v_min, v_max)".into());
        }
        if !(self.gamma.eps_gamma > 0.0 && self.gamma.eps_gamma < 0.5) {
            return e("gamma.eps_gamma must lie in (0, 0.5)".into());
        }
        let init = &self.initial;
        if !(p.v_min < init.speed_lo && init.speed_lo < init.speed_hi && init.speed_hi < p.v_max) {
            return e("initial speed bump must sit strictly inside (v_min, v_max)".into());
        }
        if init.s_x <= 0.0 {
            return e("initial.s_x must be positive".into());
        }
        if self.simulation.t_max <= 0.0 {
            return e("simulation.t_max must be positive".into());
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn default_desk() -> Self {
        RunConfig {
            run: RunSection {
                n_paths: 10_000,
                seed: 1,
                workers: 0,
                out_dir: "out".into(),
            },
            model: ModelConfig::default_desk(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|err| RunError::Config(err.to_string()))?;
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// 64-bit FNV-1a over the canonical serialization; embedded in artifacts.
    pub fn hash(&self) -> u64 {
        crate::store::fnv1a(self.to_toml().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_through_toml() {
        let cfg = RunConfig::default_desk();
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn unknown_keys_are_hard_errors() {
        let mut text = RunConfig::default_desk().to_toml();
        text.push_str("\n[gamma]\neps_gamm = 0.2\n");
        // duplicate table also fails, so instead inject a typo into a fresh config
        let bad = text.replace("eps_gamma = 0.1", "eps_gamma = 0.1\nepz_gamma = 0.3");
        assert!(RunConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn validation_rejects_bad_dimension() {
        let mut cfg = RunConfig::default_desk();
        cfg.model.domain.d = 4;
        assert!(cfg.model.validate().is_err());
    }
}
