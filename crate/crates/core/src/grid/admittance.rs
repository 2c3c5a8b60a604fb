use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::network::{validate_line, Line, LineId};
use crate::error::Result;

const J: Complex64 = Complex64::new(0.0, 1.0);

/// Two-port admittance of a line in π-model form:
/// `(I_km, I_mk) = [[y11, y12], [y21, y22]] · (V_k, V_m)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchAdmittance {
    pub y11: Complex64,
    pub y12: Complex64,
    pub y21: Complex64,
    pub y22: Complex64,
}

impl BranchAdmittance {
    /// Same two-port seen from the other end.
    pub fn reversed(&self) -> BranchAdmittance {
        BranchAdmittance {
            y11: self.y22,
            y12: self.y21,
            y21: self.y12,
            y22: self.y11,
        }
    }

    pub fn currents(&self, v_k: Complex64, v_m: Complex64) -> (Complex64, Complex64) {
        (self.y11 * v_k + self.y12 * v_m, self.y21 * v_k + self.y22 * v_m)
    }

    pub fn as_array(&self) -> [[Complex64; 2]; 2] {
        [[self.y11, self.y12], [self.y21, self.y22]]
    }
}

/// π-model admittance with off-nominal tap `τ` and phase shift `σ` on the
/// from side.
pub fn branch_admittance(line: &Line) -> Result<BranchAdmittance> {
    validate_line(LineId::MAX, line)?;
    Ok(admittance_unchecked(line))
}

pub(crate) fn admittance_unchecked(line: &Line) -> BranchAdmittance {
    let y = Complex64::new(1.0, 0.0) / Complex64::new(line.r, line.x);
    let shunt = J * (line.b_charge / 2.0);
    let tau = line.tap_ratio;
    let y_ff = y + shunt;
    BranchAdmittance {
        y11: y_ff / (tau * tau),
        y12: -y / (tau * Complex64::from_polar(1.0, -line.phase_shift)),
        y21: -y / (tau * Complex64::from_polar(1.0, line.phase_shift)),
        y22: y_ff,
    }
}

/// Complex power entering the line at each end.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchFlow {
    pub p_km: f64,
    pub q_km: f64,
    pub p_mk: f64,
    pub q_mk: f64,
}

impl BranchFlow {
    pub fn s_km(&self) -> Complex64 {
        Complex64::new(self.p_km, self.q_km)
    }

    pub fn s_mk(&self) -> Complex64 {
        Complex64::new(self.p_mk, self.q_mk)
    }

    /// Larger apparent power of the two ends.
    pub fn max_apparent(&self) -> f64 {
        self.s_km().norm().max(self.s_mk().norm())
    }
}

pub fn branch_power(v_k: Complex64, v_m: Complex64, line: &Line) -> Result<BranchFlow> {
    let y = branch_admittance(line)?;
    Ok(flow_with(&y, v_k, v_m))
}

pub(crate) fn flow_with(y: &BranchAdmittance, v_k: Complex64, v_m: Complex64) -> BranchFlow {
    let (i_km, i_mk) = y.currents(v_k, v_m);
    let s_km = v_k * i_km.conj();
    let s_mk = v_m * i_mk.conj();
    BranchFlow {
        p_km: s_km.re,
        q_km: s_km.im,
        p_mk: s_mk.re,
        q_mk: s_mk.im,
    }
}

/// Complex power entering a line at its near end together with its partial
/// derivatives with respect to `(|V_near|, θ_near, |V_far|, θ_far)`.
///
/// With `V_near = a∠α`, `V_far = b∠β`:
/// `S = a²·conj(y_nn) + a·b·conj(y_nf)·e^{j(α−β)}`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct EndFlow {
    pub s: Complex64,
    pub d: [Complex64; 4],
}

pub(crate) fn end_flow(y_nn: Complex64, y_nf: Complex64, a: f64, alpha: f64, b: f64, beta: f64) -> EndFlow {
    let cross = y_nf.conj() * Complex64::from_polar(1.0, alpha - beta);
    let s = a * a * y_nn.conj() + a * b * cross;
    let d_a = 2.0 * a * y_nn.conj() + b * cross;
    let d_b = a * cross;
    let d_alpha = J * a * b * cross;
    EndFlow {
        s,
        d: [d_a, d_alpha, d_b, -d_alpha],
    }
}
