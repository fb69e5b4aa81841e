//! Repacking potential and migration budgets.

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::geometry::{Constants, ItemClass};
use crate::num::{fmt_q, qmax, qu, serde_q, Q};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LedgerMode {
    #[default]
    Measure,
    Enforce,
}

/// Per-class migration budgets credited on arrival.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuBudgets {
    #[serde(with = "serde_q")]
    pub semi: Q,
    #[serde(with = "serde_q")]
    pub big: Q,
    #[serde(with = "serde_q")]
    pub flat: Q,
    #[serde(with = "serde_q")]
    pub narrow: Q,
}

impl MuBudgets {
    /// Explicit constants with every hidden factor set to 1.
    ///
    /// semi:   (threshold / eps^2)
    /// big:    gamma / eps^2 with gamma = q h_B d^2 / eps, d the group bound
    /// flat:   gamma / eps^3
    /// narrow: (q+1) h_B / ((1-eps)^2 max(h_B - 1 - lambda, eps))
    pub fn derive(c: &Constants) -> Self {
        let e = &c.epsilon;
        let e2 = e * e;
        let hb = c.h_b();
        let qv = qu(c.align_budget);
        let d = qu(c.group_bound);
        let gamma = &qv * &hb * &d * &d / e;
        let one = Q::from_integer(1.into());
        let den = qmax(&(&hb - &one - &c.lambda), e);
        let om = &one - e;
        Self {
            semi: &c.online_threshold / &e2,
            big: &gamma / &e2,
            flat: &gamma / (&e2 * e),
            narrow: (&qv + &one) * &hb / (&om * &om * den),
        }
    }

    pub fn for_class(&self, class: ItemClass, online: bool) -> &Q {
        if !online {
            return &self.semi;
        }
        match class {
            ItemClass::Big => &self.big,
            ItemClass::Flat => &self.flat,
            ItemClass::Narrow => &self.narrow,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("potential fell to {phi} at event {t}")]
pub struct NegativePotential {
    pub t: u64,
    pub phi: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ledger {
    pub mode: LedgerMode,
    pub mu: MuBudgets,
    #[serde(with = "serde_q")]
    pub phi: Q,
    #[serde(with = "serde_q")]
    pub min_phi: Q,
    #[serde(with = "serde_q")]
    pub total_repack: Q,
    #[serde(with = "serde_q")]
    pub total_size: Q,
    pub events: u64,
}

impl Ledger {
    pub fn new(mode: LedgerMode, mu: MuBudgets) -> Self {
        Self { mode, mu, phi: Q::zero(), min_phi: Q::zero(), total_repack: Q::zero(), total_size: Q::zero(), events: 0 }
    }

    /// Credits the arrival, debits the repacked area, and returns the new potential.
    pub fn charge(&mut self, t: u64, class: ItemClass, online: bool, size: &Q, repack: &Q) -> Result<Q, NegativePotential> {
        let mu = self.mu.for_class(class, online).clone();
        let phi = &self.phi + mu * size - repack;
        if self.mode == LedgerMode::Enforce && phi.is_negative() {
            return Err(NegativePotential { t, phi: fmt_q(&phi) });
        }
        self.phi = phi;
        if self.phi < self.min_phi {
            self.min_phi = self.phi.clone();
        }
        self.total_repack += repack;
        self.total_size += size;
        self.events += 1;
        Ok(self.phi.clone())
    }

    /// Empirical migration factor: total repacked area over total arrived area.
    pub fn mu_hat(&self) -> Q {
        if self.total_size.is_zero() {
            Q::zero()
        } else {
            &self.total_repack / &self.total_size
        }
    }
}
