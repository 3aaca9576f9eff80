use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limb::Limb;

/// The five semantic loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Dist,
    Dir,
    Pen,
    Height,
    Sliding,
}

impl Term {
    pub const ALL: [Term; 5] = [Term::Dist, Term::Dir, Term::Pen, Term::Height, Term::Sliding];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Term::Dist => "dist",
            Term::Dir => "dir",
            Term::Pen => "pen",
            Term::Height => "height",
            Term::Sliding => "sliding",
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Term::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss term '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirLoss {
    /// `(w · (1 − cos))²`
    #[default]
    Alignment,
    /// `(w · cos)²`
    Verbatim,
}

impl FromStr for DirLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alignment" => Ok(DirLoss::Alignment),
            "verbatim" => Ok(DirLoss::Verbatim),
            _ => Err(Error::Config(format!("unknown dir loss '{s}' (alignment|verbatim)"))),
        }
    }
}

/// User trade-off between two loss terms on one body part.
///
/// Entries touching `limb` get their `terms[0]` weight scaled by `2λ` and
/// their `terms[1]` weight by `2(1 − λ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Balance {
    pub limb: Limb,
    pub terms: [Term; 2],
    pub lambda: f64,
}

impl Balance {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.terms[0] == self.terms[1] {
            return Err(Error::Config(format!("balance needs two different terms, got {} twice", self.terms[0])));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetargetConfig {
    pub w_reg: f64,
    pub w_smooth: f64,
    pub w_sem: f64,
    pub w_dist: f64,
    pub w_dir: f64,
    pub w_pen: f64,
    pub w_height: f64,
    pub w_sliding: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    /// Adam steps per batch.
    pub iterations: usize,
    pub batch_frames: usize,
    pub batch_overlap: usize,
    /// Thresholds as fractions of each character's height.
    pub d_min_frac: f64,
    pub d_max_frac: f64,
    pub h_min_frac: f64,
    pub h_max_frac: f64,
    pub gaze_min_deg: f64,
    pub gaze_max_deg: f64,
    pub dir_loss: DirLoss,
    pub conflict_threshold: f64,
    pub checkpoint_every: usize,
    pub balance: Vec<Balance>,
}

impl Default for RetargetConfig {
    fn default() -> Self {
        Self {
            w_reg: 1e-2,
            w_smooth: 1e-4,
            w_sem: 1.0,
            w_dist: 1.0,
            w_dir: 0.5,
            w_pen: 10.0,
            w_height: 1.0,
            w_sliding: 0.5,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            iterations: 300,
            batch_frames: 75,
            batch_overlap: 5,
            d_min_frac: 0.05,
            d_max_frac: 0.15,
            h_min_frac: 0.05,
            h_max_frac: 0.15,
            gaze_min_deg: 2.0,
            gaze_max_deg: 5.0,
            dir_loss: DirLoss::Alignment,
            conflict_threshold: -0.5,
            checkpoint_every: 10,
            balance: Vec::new(),
        }
    }
}

impl RetargetConfig {
    pub fn term_weight(&self, term: Term) -> f64 {
        match term {
            Term::Dist => self.w_dist,
            Term::Dir => self.w_dir,
            Term::Pen => self.w_pen,
            Term::Height => self.w_height,
            Term::Sliding => self.w_sliding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("w_reg", self.w_reg),
            ("w_smooth", self.w_smooth),
            ("w_sem", self.w_sem),
            ("w_dist", self.w_dist),
            ("w_dir", self.w_dir),
            ("w_pen", self.w_pen),
            ("w_height", self.w_height),
            ("w_sliding", self.w_sliding),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {w}")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::Config("adam_epsilon must be positive".into()));
        }
        if self.batch_frames == 0 {
            return Err(Error::Config("batch_frames must be at least 1".into()));
        }
        if self.batch_overlap >= self.batch_frames {
            return Err(Error::Config(format!(
                "batch_overlap ({}) must be smaller than batch_frames ({})",
                self.batch_overlap, self.batch_frames
            )));
        }
        if !(0.0 < self.d_min_frac && self.d_min_frac < self.d_max_frac) {
            return Err(Error::Config("need 0 < d_min_frac < d_max_frac".into()));
        }
        if !(0.0 < self.h_min_frac && self.h_min_frac < self.h_max_frac) {
            return Err(Error::Config("need 0 < h_min_frac < h_max_frac".into()));
        }
        if !(0.0 <= self.gaze_min_deg && self.gaze_min_deg < self.gaze_max_deg) {
            return Err(Error::Config("need 0 <= gaze_min_deg < gaze_max_deg".into()));
        }
        if !(-1.0..=1.0).contains(&self.conflict_threshold) {
            return Err(Error::Config("conflict_threshold must lie in [-1, 1]".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        for b in &self.balance {
            b.validate()?;
        }
        Ok(())
    }

    /// Replaces any balance on the same limb and term pair (either order), then appends `b`.
    pub fn set_balance(&mut self, b: Balance) {
        self.balance.retain(|x| {
            !(x.limb == b.limb
                && (x.terms == b.terms || (x.terms[0] == b.terms[1] && x.terms[1] == b.terms[0])))
        });
        self.balance.push(b);
    }

    /// Multiplier per term and limb from all balances.
    pub fn balance_factors(&self) -> [[f64; 10]; 5] {
        let mut f = [[1.0; 10]; 5];
        for b in &self.balance {
            f[b.terms[0].index()][b.limb.index()] *= 2.0 * b.lambda;
            f[b.terms[1].index()][b.limb.index()] *= 2.0 * (1.0 - b.lambda);
        }
        f
    }
}
