use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::network::{BusId, Network};
use crate::error::{Error, Result};

/// DC phase angles with one bus pinned at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcState {
    pub ref_bus: BusId,
    /// Angles by bus position, radians.
    pub theta: Vec<f64>,
}

/// Bus susceptance matrix over in-service lines: `B_kk = Σ 1/x_km`,
/// `B_km = −1/x_km`.
pub fn susceptance_matrix(network: &Network) -> DMatrix<f64> {
    let n = network.n_buses();
    let mut b = DMatrix::zeros(n, n);
    for line in network.lines.iter().filter(|l| l.in_service) {
        // indices are valid for a constructed network
        let f = network.index_of(line.from).unwrap();
        let t = network.index_of(line.to).unwrap();
        let w = 1.0 / line.x;
        b[(f, f)] += w;
        b[(t, t)] += w;
        b[(f, t)] -= w;
        b[(t, f)] -= w;
    }
    b
}

/// Factorization of the susceptance matrix with the reference row and
/// column removed. Reusable across many right-hand sides.
#[derive(Clone, Debug)]
pub struct ReducedSusceptance {
    ref_bus: BusId,
    ref_idx: usize,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    b: DMatrix<f64>,
}

impl ReducedSusceptance {
    pub fn new(network: &Network, ref_bus: BusId) -> Result<Self> {
        let ref_idx = network.index_of(ref_bus)?;
        let b = susceptance_matrix(network);
        let reduced = b.clone().remove_row(ref_idx).remove_column(ref_idx);
        let chol = nalgebra::Cholesky::new(reduced)
            .ok_or_else(|| Error::Singular("reduced susceptance matrix is not positive definite".into()))?;
        Ok(ReducedSusceptance {
            ref_bus,
            ref_idx,
            chol,
            b,
        })
    }

    pub fn ref_bus(&self) -> BusId {
        self.ref_bus
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// `B̆_r · p`: drops the reference entry of `p`, solves, reinserts zero.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let rhs = DVector::from_iterator(
            p.len() - 1,
            p.iter()
                .enumerate()
                .filter(|&(i, _)| i != self.ref_idx)
                .map(|(_, &v)| v),
        );
        let sol = self.chol.solve(&rhs);
        let mut theta = Vec::with_capacity(p.len());
        theta.extend(sol.iter().take(self.ref_idx).copied());
        theta.push(0.0);
        theta.extend(sol.iter().skip(self.ref_idx).copied());
        theta
    }
}

/// Solves `Bθ = p` with `θ[ref] = 0`.
pub fn dc_solve(network: &Network, injections: &[f64], ref_bus: BusId) -> Result<DcState> {
    if injections.len() != network.n_buses() {
        return Err(Error::IncompleteState(format!(
            "{} injections for {} buses",
            injections.len(),
            network.n_buses()
        )));
    }
    let sum: f64 = injections.iter().sum();
    let scale = injections.iter().map(|v| v.abs()).fold(1.0, f64::max);
    if sum.abs() > 1e-9 * scale {
        return Err(Error::Imbalance { sum });
    }
    let reduced = ReducedSusceptance::new(network, ref_bus)?;
    Ok(DcState {
        ref_bus,
        theta: reduced.apply(injections),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::network::testnets::*;
    use crate::grid::network::Line;

    #[test]
    fn two_bus_matrix() {
        let b = susceptance_matrix(&path(2, 0.5));
        assert_eq!(b, DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0]));
    }

    #[test]
    fn three_bus_path_matrix() {
        let b = susceptance_matrix(&path(3, 1.0));
        let want = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(b, want);
    }

    #[test]
    fn two_bus_solve() {
        let s = dc_solve(&path(2, 0.5), &[1.0, -1.0], 2).unwrap();
        assert!((s.theta[0] - 0.5).abs() < 1e-15);
        assert_eq!(s.theta[1], 0.0);
    }

    #[test]
    fn zero_injection_gives_zero_angles() {
        let s = dc_solve(&path(4, 0.3), &[0.0; 4], 3).unwrap();
        assert!(s.theta.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn triangle_matches_gaussian_elimination() {
        let buses = vec![gen_bus(1), pq_bus(2, 0.0, 0.0), pq_bus(3, 0.0, 0.0)];
        let lines = vec![
            Line::series(1, 2, 0.0, 0.1),
            Line::series(2, 3, 0.0, 0.2),
            Line::series(1, 3, 0.0, 0.3),
        ];
        let net = Network::new("tri", 100.0, buses, lines, vec![generator(1, 0.0)], 1, None).unwrap();
        let p = [1.0, -0.4, -0.6];
        let s = dc_solve(&net, &p, 1).unwrap();

        // reduced 2x2 system on buses 2, 3 solved by Cramer's rule
        let b = susceptance_matrix(&net);
        let (a11, a12, a21, a22) = (b[(1, 1)], b[(1, 2)], b[(2, 1)], b[(2, 2)]);
        let det = a11 * a22 - a12 * a21;
        let t2 = (p[1] * a22 - a12 * p[2]) / det;
        let t3 = (a11 * p[2] - a21 * p[1]) / det;
        assert_eq!(s.theta[0], 0.0);
        assert!((s.theta[1] - t2).abs() < 1e-12);
        assert!((s.theta[2] - t3).abs() < 1e-12);

        let resid = &b * DVector::from_vec(s.theta.clone()) - DVector::from_row_slice(&p);
        assert!(resid.amax() < 1e-9);
    }

    #[test]
    fn rejects_imbalance() {
        assert!(matches!(
            dc_solve(&path(2, 0.5), &[1.0, -0.5], 1),
            Err(Error::Imbalance { .. })
        ));
    }
}
