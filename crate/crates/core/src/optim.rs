//! Derivative-free 1-D maximization: coarse scans and golden-section search.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Best point found by a search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maximum {
    pub x: f64,
    pub f: f64,
    pub evals: usize,
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        match best {
            Some(b) if values[b] >= *v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Golden-section search for a maximum of `f` on `[a, b]`.
///
/// Stops when the bracket is narrower than `tol` or after `max_evals`
/// evaluations. `incumbent` is an already evaluated point `(x, f(x))` that
/// wins ties; the returned maximum is the best point seen.
pub fn golden_section_max(
    mut f: impl FnMut(f64) -> f64,
    mut a: f64,
    mut b: f64,
    tol: f64,
    max_evals: usize,
    incumbent: Option<(f64, f64)>,
) -> Maximum {
    let mut best = incumbent.map(|(x, fx)| Maximum { x, f: fx, evals: 0 });
    let mut evals = 0usize;
    let consider = |x: f64, fx: f64, best: &mut Option<Maximum>| match best {
        Some(m) if m.f >= fx => {}
        _ => {
            *best = Some(Maximum { x, f: fx, evals: 0 });
        }
    };
    if max_evals == 0 || !(b > a) {
        let mut m = best.unwrap_or(Maximum {
            x: a,
            f: f64::NEG_INFINITY,
            evals: 0,
        });
        if best.is_none() && max_evals > 0 {
            m.f = f(a);
            m.evals = 1;
        }
        return m;
    }

    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    evals += 1;
    consider(x1, f1, &mut best);
    let mut f2 = if evals < max_evals {
        evals += 1;
        let v = f(x2);
        consider(x2, v, &mut best);
        v
    } else {
        f64::NEG_INFINITY
    };

    while evals < max_evals && (b - a) > tol {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
            consider(x1, f1, &mut best);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
            consider(x2, f2, &mut best);
        }
        evals += 1;
    }
    let mut m = best.expect("at least one evaluation");
    m.evals = evals;
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_parabola_peak() {
        let m = golden_section_max(|x| -(x - 0.3).powi(2), 0.0, 1.0, 1e-6, 200, None);
        assert!((m.x - 0.3).abs() < 1e-5);
    }

    #[test]
    fn respects_eval_cap() {
        let mut n = 0;
        let m = golden_section_max(
            |x| {
                n += 1;
                -(x - 0.3).powi(2)
            },
            0.0,
            1.0,
            0.0,
            7,
            None,
        );
        assert_eq!(n, 7);
        assert_eq!(m.evals, 7);
    }

    #[test]
    fn incumbent_wins_ties() {
        let m = golden_section_max(|_| 1.0, 0.0, 1.0, 1e-3, 50, Some((0.5, 1.0)));
        assert_eq!(m.x, 0.5);
    }

    #[test]
    fn argmax_ties_to_first() {
        assert_eq!(argmax_first(&[1.0, 3.0, 3.0, 2.0]), Some(1));
        assert_eq!(argmax_first(&[]), None);
        assert_eq!(argmax_first(&[f64::NAN, 0.0]), Some(1));
    }
}
