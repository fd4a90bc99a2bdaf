//! JSON form of a built mechanism.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::ProblemInstance;
use crate::virtual_value::VirtualValueCurve;

use super::{PaymentRule, ThresholdMechanism, TieBreak};

pub const MECHANISM_SCHEMA: &str = "persuasion.mechanism/v1";

/// Relative tolerance when deciding whether stored payments follow the
/// optimal rule.
const PAYMENT_MATCH: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuyerDoc {
    pub curve: VirtualValueCurve,
    pub win_prob: Vec<f64>,
    pub win_weight: Vec<f64>,
    pub payment: Vec<Option<f64>>,
    pub cutoff_type: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismDoc {
    pub schema: String,
    pub tiebreak: TieBreak,
    pub valuation: String,
    pub quality_grid: Vec<f64>,
    pub xi: Vec<f64>,
    pub degenerate: bool,
    pub buyers: Vec<BuyerDoc>,
}

pub(super) fn to_doc(m: &ThresholdMechanism) -> MechanismDoc {
    let qm = m.quality();
    MechanismDoc {
        schema: MECHANISM_SCHEMA.to_string(),
        tiebreak: m.tiebreak,
        valuation: if m.is_linear() { "linear" } else { "general" }.to_string(),
        quality_grid: qm.grid().to_vec(),
        xi: qm.xi().vals().to_vec(),
        degenerate: m.is_degenerate(),
        buyers: (0..m.n())
            .map(|i| BuyerDoc {
                curve: m.curves[i].clone(),
                win_prob: m.tables[i].win_prob.clone(),
                win_weight: m.tables[i].win_weight.clone(),
                payment: m.tables[i].payment.clone(),
                cutoff_type: m.cutoff_type(i),
            })
            .collect(),
    }
}

fn same_payment(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= PAYMENT_MATCH * (1.0 + x.abs().max(y.abs())),
        _ => false,
    }
}

pub(super) fn from_doc(inst: &ProblemInstance, doc: &MechanismDoc) -> Result<ThresholdMechanism> {
    if doc.schema != MECHANISM_SCHEMA {
        return Err(Error::Config(format!("mechanism schema is {:?}, expected {MECHANISM_SCHEMA:?}", doc.schema)));
    }
    if doc.buyers.len() != inst.n() {
        return Err(Error::Config(format!(
            "mechanism has {} buyers but the instance has {}",
            doc.buyers.len(),
            inst.n()
        )));
    }
    if doc.quality_grid != inst.quality.grid() {
        return Err(Error::Config("mechanism quality grid does not match the instance".into()));
    }
    for (i, b) in doc.buyers.iter().enumerate() {
        let m = inst.buyers[i].len();
        if b.curve.type_grid != inst.buyers[i].grid() || b.payment.len() != m {
            return Err(Error::Config(format!("mechanism buyer {i} does not match the instance type grid")));
        }
    }
    let curves = doc.buyers.iter().map(|b| b.curve.clone()).collect();
    let mut mech = ThresholdMechanism::with_curves(inst, curves)?;
    let matches = doc
        .buyers
        .iter()
        .zip(&mech.tables)
        .all(|(b, t)| b.payment.iter().zip(&t.payment).all(|(&x, &y)| same_payment(x, y)));
    if !matches {
        log::info!("stored payments differ from the optimal rule; using them as a table");
        for (b, t) in doc.buyers.iter().zip(mech.tables.iter_mut()) {
            t.payment = b.payment.clone();
        }
        mech.rule = PaymentRule::Table;
    }
    Ok(mech)
}
