//! Functional and timing models of the execution units: reduction,
//! elementwise, scalar FP, streaming Top-k and integer select.

mod timings;
mod topk;

pub use timings::UnitTimings;
pub use topk::{topk_mask, TopKState};

use crate::numerics::{round_bf16, scalar_exp, Scalar};

/// Maximum and its absolute index (`base_index` + lane). Ties resolve to the
/// lowest lane. `None` on empty input.
pub fn reduce_max_idx<F: Scalar>(values: &[F], base_index: i64) -> Option<(F, i64)> {
    let (first, rest) = values.split_first()?;
    let mut best = *first;
    let mut lane = 0usize;
    for (i, &v) in rest.iter().enumerate() {
        if v > best {
            best = v;
            lane = i + 1;
        }
    }
    Some((best, base_index + lane as i64))
}

/// Adder-tree sum: adjacent lanes are paired level by level, an odd trailing
/// lane passes through to the next level unchanged.
pub fn reduce_sum<F: Scalar>(values: &[F]) -> F {
    match values.len() {
        0 => F::zero(),
        1 => values[0],
        _ => {
            let mut level: Vec<F> = values.to_vec();
            while level.len() > 1 {
                let half = level.len() / 2;
                for i in 0..half {
                    level[i] = level[2 * i] + level[2 * i + 1];
                }
                if level.len() % 2 == 1 {
                    level[half] = level[level.len() - 1];
                    level.truncate(half + 1);
                } else {
                    level.truncate(half);
                }
            }
            level[0]
        }
    }
}

/// In-place `v - s` per lane, each result rounded to BF16.
pub fn elementwise_sub_scalar(values: &mut [f32], s: f32) {
    for v in values {
        *v = round_bf16(*v - s);
    }
}

/// In-place lane-wise difference `a - b`, rounded to BF16, written into `a`.
pub fn elementwise_sub(a: &mut [f32], b: &[f32]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x = round_bf16(*x - *y);
    }
}

/// In-place `e^v` per lane, rounded to BF16.
pub fn elementwise_exp(values: &mut [f32]) {
    for v in values {
        *v = round_bf16(scalar_exp(*v));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("select operands differ in length (mask {mask}, a {a}, b {b})")]
pub struct LengthMismatch {
    pub mask: usize,
    pub a: usize,
    pub b: usize,
}

/// `out[i] = mask[i] ? a[i] : b[i]`.
pub fn select_int(mask: &[bool], a: &[i32], b: &[i32]) -> Result<Vec<i32>, LengthMismatch> {
    if mask.len() != a.len() || a.len() != b.len() {
        return Err(LengthMismatch {
            mask: mask.len(),
            a: a.len(),
            b: b.len(),
        });
    }
    Ok(mask
        .iter()
        .zip(a.iter().zip(b))
        .map(|(&m, (&x, &y))| if m { x } else { y })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_idx_single_and_ties() {
        assert_eq!(reduce_max_idx(&[5.0f32], 10), Some((5.0, 10)));
        assert_eq!(reduce_max_idx(&[1.0f32, 3.0, 3.0], 0), Some((3.0, 1)));
        assert_eq!(reduce_max_idx::<f32>(&[], 0), None);
    }

    #[test]
    fn sum_basics() {
        assert_eq!(reduce_sum(&[1.0f32, 1.0, 1.0, 1.0]), 4.0);
        assert_eq!(reduce_sum(&[7.5f32]), 7.5);
        assert_eq!(reduce_sum(&[1.0f64, 2.0, 3.0]), 6.0);
    }

    #[test]
    fn sum_tree_order() {
        // ((a + b) + (c + d)) + e, distinguishable from a sequential fold.
        let v = [1.0e8f32, 1.0, -1.0e8, 1.0, 0.5];
        let expected = ((v[0] + v[1]) + (v[2] + v[3])) + v[4];
        assert_eq!(reduce_sum(&v), expected);
    }

    #[test]
    fn elementwise_ops() {
        let mut v = [3.0f32, 4.0];
        elementwise_sub_scalar(&mut v, 3.0);
        assert_eq!(v, [0.0, 1.0]);
        let mut z = [0.0f32, 0.0];
        elementwise_exp(&mut z);
        assert_eq!(z, [1.0, 1.0]);
        let mut a = [1.0f32, 1.0, 0.0];
        elementwise_sub(&mut a, &[1.0, 0.0, 0.0]);
        assert_eq!(a, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn shifted_exp_peaks_at_one() {
        let mut v: Vec<f32> = (0..100)
            .map(|i| round_bf16((i as f32 * 0.37).sin() * 8.0))
            .collect();
        let (m, _) = reduce_max_idx(&v, 0).unwrap();
        elementwise_sub_scalar(&mut v, m);
        elementwise_exp(&mut v);
        let (top, _) = reduce_max_idx(&v, 0).unwrap();
        assert_eq!(top, 1.0);
        assert!(v.iter().all(|x| *x <= 1.0));
    }

    #[test]
    fn select_cases() {
        let a = [1, 2, 3];
        let b = [7, 8, 9];
        assert_eq!(select_int(&[true; 3], &a, &b).unwrap(), a);
        assert_eq!(select_int(&[false; 3], &a, &b).unwrap(), b);
        assert_eq!(select_int(&[true, false, true], &a, &b).unwrap(), [1, 8, 3]);
        assert!(select_int(&[true; 2], &a, &b).is_err());
    }
}
