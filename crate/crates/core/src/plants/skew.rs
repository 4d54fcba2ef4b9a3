use nalgebra::DMatrix;

use super::{HeatFunction, PlantError};
use crate::dynamics::TimeVaryingSystem;

/// Bidiagonal matrix `A(u)` with superdiagonal `u`, subdiagonal `−kᵢu`
/// (row `i = 2…m`) and corner entry `−kₘ`. `k` holds `k₂ … kₘ`.
pub fn skew_matrix(u: f64, k: &[f64]) -> DMatrix<f64> {
    let m = k.len() + 1;
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m - 1 {
        a[(i, i + 1)] = u;
        a[(i + 1, i)] = -k[i] * u;
    }
    a[(m - 1, m - 1)] = -k[m - 2];
    a
}

/// Diagonal weights `p₁ … pₘ` that cancel every cross term of
/// `d/dt zᵀPz` along `ż = A(u)z`: `pₘ = 1`, `pᵢ = k_{i+1}p_{i+1}`.
/// The derivative then equals `−2pₘkₘzₘ²`.
pub fn skew_weights(k: &[f64]) -> Vec<f64> {
    let m = k.len() + 1;
    let mut p = vec![1.0; m];
    for i in (0..m - 1).rev() {
        p[i] = k[i] * p[i + 1];
    }
    p
}

/// State `(y, z₁ … zₘ)` with `u = −y + h(t, z)`, `ẏ = u`, `ż = A(u) z`.
pub fn skew_symmetric_plant(
    m: usize,
    k: &[f64],
    heat: HeatFunction,
) -> Result<TimeVaryingSystem, PlantError> {
    if m < 2 {
        return Err(PlantError::Invalid(format!("skew plant needs m >= 2, got {m}")));
    }
    if k.len() != m - 1 {
        return Err(PlantError::Invalid(format!(
            "expected {} gains k_2..k_m, got {}",
            m - 1,
            k.len()
        )));
    }
    if k.iter().any(|v| !(*v > 0.0)) {
        return Err(PlantError::Invalid("skew gains must be positive".into()));
    }
    if heat.z_dim() != m {
        return Err(PlantError::Invalid(format!(
            "heat function dimension {} does not match m = {m}",
            heat.z_dim()
        )));
    }
    let k = k.to_vec();
    Ok(TimeVaryingSystem::new(m + 1, format!("skew{m}"), move |t, x| {
        let z = &x[1..];
        let u = -x[0] + heat.h(t, z);
        let mut out = Vec::with_capacity(m + 1);
        out.push(u);
        for i in 0..m {
            let mut d = 0.0;
            if i + 1 < m {
                d += u * z[i + 1];
            }
            if i > 0 {
                d -= k[i - 1] * u * z[i - 1];
            }
            if i == m - 1 {
                d -= k[m - 2] * z[i];
            }
            out.push(d);
        }
        out
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::{make_heat, HeatKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two_structure() {
        let a = skew_matrix(0.7, &[3.0]);
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 0.7, -3.0 * 0.7, -3.0]);
        assert_eq!(a, expected);
    }

    #[test]
    fn zero_input_leaves_only_corner() {
        let a = skew_matrix(0.0, &[2.0, 3.0, 4.0]);
        for i in 0..4 {
            for j in 0..4 {
                let expected = if (i, j) == (3, 3) { -4.0 } else { 0.0 };
                assert_eq!(a[(i, j)], expected);
            }
        }
    }

    #[test]
    fn equilibrium_of_z() {
        let sys = skew_symmetric_plant(3, &[1.0, 2.0], make_heat(HeatKind::Zero, 3).unwrap()).unwrap();
        assert_eq!(sys.eval(0.0, &[1.0, 0.0, 0.0, 0.0]), vec![-1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn rhs_matches_matrix_form_and_weights_cancel_cross_terms() {
        let k = [2.0, 0.5, 3.0];
        let heat = make_heat(HeatKind::QuadraticSine { kappa: 1.0, freq: 1.0 }, 4).unwrap();
        let sys = skew_symmetric_plant(4, &k, heat).unwrap();
        let p = skew_weights(&k);
        assert_eq!(p, vec![3.0, 1.5, 3.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let t: f64 = rng.gen_range(0.0..6.0);
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = sys.eval(t, &x);
            let u = -x[0] + heat.h(t, &x[1..]);
            let z = nalgebra::DVector::from_column_slice(&x[1..]);
            let az = skew_matrix(u, &k) * &z;
            for i in 0..4 {
                assert!((az[i] - f[i + 1]).abs() < 1e-13);
            }
            let dv: f64 = (0..4).map(|i| 2.0 * p[i] * z[i] * f[i + 1]).sum();
            assert!((dv + 2.0 * p[3] * k[2] * z[3] * z[3]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_dimensions() {
        let heat = make_heat(HeatKind::Zero, 2).unwrap();
        assert!(skew_symmetric_plant(1, &[], heat).is_err());
        assert!(skew_symmetric_plant(3, &[1.0, 1.0], heat).is_err());
        assert!(skew_symmetric_plant(2, &[1.0, 1.0], heat).is_err());
    }
}
