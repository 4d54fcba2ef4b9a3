use serde::{Deserialize, Serialize};

use super::PlantError;

/// Channel gains `g̃₁…g̃_{n−1}` and their tail products `gᵢ = ∏_{j≥i} g̃ⱼ`;
/// the last block always gets `gₙ = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainVector {
    pub g_tilde: Vec<f64>,
    pub g: Vec<f64>,
    pub g_n: f64,
}

impl GainVector {
    pub fn from_tilde(g_tilde: &[f64]) -> Self {
        let mut g = vec![0.0; g_tilde.len()];
        let mut acc = 1.0;
        for i in (0..g_tilde.len()).rev() {
            acc *= g_tilde[i];
            g[i] = acc;
        }
        Self {
            g_tilde: g_tilde.to_vec(),
            g,
            g_n: 1.0,
        }
    }

    /// Number of blocks `n`.
    pub fn blocks(&self) -> usize {
        self.g_tilde.len() + 1
    }

    /// `φᵢ = |gᵢ ⋯ g_{n−1}|·‖yᵢ‖` for `i = 1…n−1` (1-based `i` as `i − 1` here).
    pub fn phi(&self, i: usize, y_norm: f64) -> f64 {
        self.g[i..].iter().product::<f64>().abs() * y_norm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainIdentityReport {
    pub g: Vec<f64>,
    /// `gᵢ = g̃ᵢ g_{i+1}`
    pub recursion_error: f64,
    /// `gᵢ = [g_{n−1}⋯gᵢ]^{1/(n−i)} ∏_{k=i}^{n−2} g̃ₖ^{(n−1−k)/(n−i)}`
    pub factorization_error: f64,
    /// `‖gᵢyᵢ‖ = φᵢ^{1/(n−i)} ‖yᵢ‖^{(n−i−1)/(n−i)} ∏_{k=i}^{n−2} g̃ₖ^{(n−1−k)/(n−i)}`
    pub split_error: f64,
    pub max_relative_error: f64,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Verify the product identities behind the channel construction. `y_norms`
/// (one per channel) feed the split identity; unit norms are used if empty.
pub fn gain_identities_check(
    g_tilde: &[f64],
    n: usize,
    y_norms: &[f64],
) -> Result<GainIdentityReport, PlantError> {
    if n < 2 || g_tilde.len() != n - 1 {
        return Err(PlantError::Invalid(format!(
            "expected n - 1 = {} channel gains, got {}",
            n.saturating_sub(1),
            g_tilde.len()
        )));
    }
    if let Some((index, &value)) = g_tilde.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(PlantError::NonPositiveGain { index, value });
    }
    let gv = GainVector::from_tilde(g_tilde);
    let g = &gv.g;
    let last = n - 2; // 0-based index of g_{n−1}

    let mut recursion_error: f64 = 0.0;
    for i in 0..last {
        recursion_error = recursion_error.max(rel(g_tilde[i] * g[i + 1], g[i]));
    }
    recursion_error = recursion_error.max(rel(g_tilde[last], g[last]));

    let mut factorization_error: f64 = 0.0;
    let mut split_error: f64 = 0.0;
    for i in 0..=last {
        // 1-based index ib = i + 1, so n − ib = n − 1 − i.
        let span = (n - 1 - i) as f64;
        let tail: f64 = g[i..].iter().product();
        let tilde_part: f64 = (i..last)
            .map(|k| g_tilde[k].powf((last - k) as f64 / span))
            .product();
        factorization_error = factorization_error.max(rel(tail.powf(1.0 / span) * tilde_part, g[i]));

        let y = y_norms.get(i).copied().unwrap_or(1.0).abs();
        if y > 0.0 {
            let phi = gv.phi(i, y);
            let split = phi.powf(1.0 / span) * y.powf((span - 1.0) / span) * tilde_part;
            split_error = split_error.max(rel(split, g[i].abs() * y));
        }
    }
    Ok(GainIdentityReport {
        g: g.clone(),
        recursion_error,
        factorization_error,
        split_error,
        max_relative_error: recursion_error.max(factorization_error).max(split_error),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tail_products() {
        let r = gain_identities_check(&[2.0, 3.0, 5.0], 4, &[]).unwrap();
        assert_eq!(r.g, vec![30.0, 15.0, 5.0]);
        assert!(r.max_relative_error < 1e-12);
    }

    #[test]
    fn factorization_worked_value() {
        // [g₃g₂g₁]^{1/3}·g̃₂^{1/3}·g̃₁^{2/3} = (2250·3·4)^{1/3} = 30
        let lhs = (5.0_f64 * 15.0 * 30.0).powf(1.0 / 3.0) * 3f64.powf(1.0 / 3.0) * 2f64.powf(2.0 / 3.0);
        assert!((lhs - 30.0).abs() < 1e-12);
        assert!((27000f64.powf(1.0 / 3.0) - 30.0).abs() < 1e-12);
    }

    #[test]
    fn unit_gains() {
        let r = gain_identities_check(&[1.0; 5], 6, &[]).unwrap();
        assert!(r.g.iter().all(|g| *g == 1.0));
        assert_eq!(r.max_relative_error, 0.0);
    }

    #[test]
    fn rejects_nonpositive() {
        assert_eq!(
            gain_identities_check(&[1.0, 0.0], 3, &[]),
            Err(PlantError::NonPositiveGain { index: 1, value: 0.0 })
        );
        assert!(gain_identities_check(&[1.0, -2.0], 3, &[]).is_err());
        assert!(gain_identities_check(&[1.0], 3, &[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn identities_hold_on_random_draws(
            g in prop::collection::vec(0.05f64..20.0, 1..8),
            y in prop::collection::vec(0.01f64..10.0, 8),
        ) {
            let n = g.len() + 1;
            let r = gain_identities_check(&g, n, &y).unwrap();
            prop_assert!(r.max_relative_error < 1e-9, "{:?}", r);
        }
    }
}
