//! Conversion of real marginals to integer supplies over a common denominator.

/// Largest denominator recognised when recovering rational weights.
pub const MAX_DENOMINATOR: u64 = 1_000_000;

/// Largest common denominator used before falling back to fixed scaling.
const MAX_COMMON_DENOMINATOR: u64 = 1 << 50;

/// Fallback scale for marginals that are not short rationals.
const FALLBACK_SCALE: u64 = 1 << 40;

const RATIONAL_TOL: f64 = 1e-15;

/// Best rational approximation `p/q` of `x` in `[0, 1]` with `q <= max_den`,
/// by continued fractions. Returns `None` if no such fraction is within
/// `RATIONAL_TOL` of `x`.
pub(crate) fn rational_approx(x: f64, max_den: u64) -> Option<(u64, u64)> {
    if !(0.0..=1.0).contains(&x) {
        return None;
    }
    let (mut h0, mut h1) = (0u64, 1u64);
    let (mut k0, mut k1) = (1u64, 0u64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a > max_den as f64 {
            break;
        }
        let a = a as u64;
        let h2 = a.checked_mul(h1)?.checked_add(h0)?;
        let k2 = a.checked_mul(k1)?.checked_add(k0)?;
        if k2 > max_den {
            break;
        }
        (h0, h1) = (h1, h2);
        (k0, k1) = (k1, k2);
        if (x - h1 as f64 / k1 as f64).abs() <= RATIONAL_TOL {
            return Some((h1, k1));
        }
        let frac = r - a as f64;
        if frac <= 0.0 {
            break;
        }
        r = 1.0 / frac;
    }
    if k1 > 0 && (x - h1 as f64 / k1 as f64).abs() <= RATIONAL_TOL {
        Some((h1, k1))
    } else {
        None
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Common integer denominator for all (normalized) weights, or `None` if
/// some weight is not a short rational.
pub(crate) fn common_denominator<'a>(weights: impl IntoIterator<Item = &'a f64>) -> Option<u64> {
    let mut lcm = 1u64;
    for &w in weights {
        let (_, q) = rational_approx(w, MAX_DENOMINATOR)?;
        lcm = lcm / gcd(lcm, q) * q;
        if lcm > MAX_COMMON_DENOMINATOR {
            return None;
        }
    }
    Some(lcm)
}

/// Integer masses proportional to `weights` summing to exactly `total`
/// (largest-remainder rounding).
pub(crate) fn integer_masses(weights: &[f64], total: u64) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    let scaled: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut masses: Vec<u64> = scaled.iter().map(|x| x.round().max(0.0) as u64).collect();
    let mut assigned: u64 = masses.iter().sum();
    if assigned != total {
        let mut order: Vec<usize> = (0..weights.len()).collect();
        if assigned < total {
            // give units to those rounded down the most
            order.sort_by(|&a, &b| {
                (scaled[b] - masses[b] as f64)
                    .total_cmp(&(scaled[a] - masses[a] as f64))
                    .then(a.cmp(&b))
            });
            let mut idx = 0;
            while assigned < total {
                masses[order[idx % order.len()]] += 1;
                assigned += 1;
                idx += 1;
            }
        } else {
            order.sort_by(|&a, &b| {
                (masses[b] as f64 - scaled[b])
                    .total_cmp(&(masses[a] as f64 - scaled[a]))
                    .then(a.cmp(&b))
            });
            let mut idx = 0;
            while assigned > total {
                let t = order[idx % order.len()];
                if masses[t] > 0 {
                    masses[t] -= 1;
                    assigned -= 1;
                }
                idx += 1;
            }
        }
    }
    masses
}

/// Chooses the integer total used to scale both marginals.
pub(crate) fn scale_for(a: &[f64], b: &[f64]) -> u64 {
    let sa: f64 = a.iter().sum();
    let sb: f64 = b.iter().sum();
    let normalized = a.iter().map(|w| w / sa).chain(b.iter().map(|w| w / sb));
    let owned: Vec<f64> = normalized.collect();
    common_denominator(owned.iter()).unwrap_or(FALLBACK_SCALE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_simple_fractions() {
        assert_eq!(rational_approx(0.5, MAX_DENOMINATOR), Some((1, 2)));
        assert_eq!(rational_approx(1.0 / 3.0, MAX_DENOMINATOR), Some((1, 3)));
        assert_eq!(rational_approx(1.0 / 500.0, MAX_DENOMINATOR), Some((1, 500)));
        assert_eq!(rational_approx(0.0, MAX_DENOMINATOR), Some((0, 1)));
        assert_eq!(rational_approx(1.0, MAX_DENOMINATOR), Some((1, 1)));
        assert_eq!(rational_approx(std::f64::consts::FRAC_1_PI, MAX_DENOMINATOR), None);
    }

    #[test]
    fn lcm_of_uniform_weights() {
        let a = vec![1.0 / 500.0; 500];
        let b = vec![1.0 / 243.0; 243];
        assert_eq!(scale_for(&a, &b), 121_500);
    }

    #[test]
    fn masses_sum_to_total() {
        let m = integer_masses(&[1.0 / 3.0; 3], 3);
        assert_eq!(m, vec![1, 1, 1]);
        let m = integer_masses(&[0.2, 0.3, 0.5], 7);
        assert_eq!(m.iter().sum::<u64>(), 7);
        let m = integer_masses(&[0.5, 0.5], 1 << 40);
        assert_eq!(m, vec![1 << 39, 1 << 39]);
    }
}
