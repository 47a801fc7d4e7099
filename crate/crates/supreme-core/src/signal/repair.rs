//! NaN/Inf repair for raw leads.
//!
//! Each non-finite sample is replaced by the mean of the six nearest finite
//! samples of the same lead, measured by index distance with ties broken
//! toward the lower index. At the edges the window shifts inward. Repairs
//! read only the originally finite values, so already-repaired samples never
//! feed later repairs and the operation is idempotent.

use super::{EcgRecord, Result, SignalError};

const NEIGHBORS: usize = 6;

/// Repair every non-finite sample in place. A lead with fewer than six
/// finite samples cannot donate a six-sample window and is an error.
pub fn repair_nonfinite(record: &mut EcgRecord) -> Result<()> {
    let samples = record.samples();
    for lead_idx in 0..record.leads() {
        let lead = record.lead_mut(lead_idx);
        let finite: Vec<usize> = (0..samples).filter(|&i| lead[i].is_finite()).collect();
        if finite.len() == samples {
            continue;
        }
        if finite.len() < NEIGHBORS {
            return Err(SignalError::IrreparableLead { lead: lead_idx, finite: finite.len() });
        }
        let original = lead.to_vec();
        for i in 0..samples {
            if original[i].is_finite() {
                continue;
            }
            lead[i] = neighbor_mean(&original, &finite, i);
        }
    }
    Ok(())
}

/// Mean of the six nearest finite donors around `target`. `finite` holds the
/// sorted indices of finite samples in `original`.
fn neighbor_mean(original: &[f32], finite: &[usize], target: usize) -> f32 {
    // Two-pointer selection outward from the insertion point; on equal
    // distance the lower index wins.
    let start = finite.partition_point(|&i| i < target);
    let mut lo = start;
    let mut hi = start;
    let mut picked = Vec::with_capacity(NEIGHBORS);
    while picked.len() < NEIGHBORS {
        let lower = lo.checked_sub(1).map(|i| finite[i]);
        let upper = (hi < finite.len()).then(|| finite[hi]);
        match (lower, upper) {
            (Some(l), Some(u)) => {
                if target - l <= u - target {
                    picked.push(l);
                    lo -= 1;
                } else {
                    picked.push(u);
                    hi += 1;
                }
            }
            (Some(l), None) => {
                picked.push(l);
                lo -= 1;
            }
            (None, Some(u)) => {
                picked.push(u);
                hi += 1;
            }
            (None, None) => unreachable!("caller guarantees at least {NEIGHBORS} finite samples"),
        }
    }
    let sum: f64 = picked.iter().map(|&i| original[i] as f64).sum();
    (sum / NEIGHBORS as f64) as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record_with(lead: Vec<f32>) -> EcgRecord {
        let n = lead.len();
        EcgRecord::new("t", 1, n, 100, lead).unwrap()
    }

    #[test]
    fn centered_window_hand_case() {
        // [1,2,3,NaN,5,6,7] -> (1+2+3+5+6+7)/6 = 4.0
        let mut r = record_with(vec![1.0, 2.0, 3.0, f32::NAN, 5.0, 6.0, 7.0]);
        repair_nonfinite(&mut r).unwrap();
        assert_eq!(r.lead(0)[3], 4.0);
    }

    #[test]
    fn boundary_window_shifts_inward() {
        // [NaN,1,2,3,4,5,6,7] -> at index 0 the six nearest finite are
        // indices 1..=6 with values 1..=6, mean 3.5.
        let mut r = record_with(vec![f32::NAN, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        repair_nonfinite(&mut r).unwrap();
        assert_eq!(r.lead(0)[0], 3.5);
    }

    #[test]
    fn run_of_two_uses_original_values_only() {
        // [10, 20, NaN, NaN, 30, 40, 50, 60]: both gaps draw from the same
        // six finite donors {10,20,30,40,50,60}, mean 35; no cascading.
        let mut r = record_with(vec![10.0, 20.0, f32::NAN, f32::NAN, 30.0, 40.0, 50.0, 60.0]);
        repair_nonfinite(&mut r).unwrap();
        assert_eq!(r.lead(0)[2], 35.0);
        assert_eq!(r.lead(0)[3], 35.0);
    }

    #[test]
    fn tie_breaks_toward_lower_index() {
        // The tie decides the donor set only when the two farthest candidates
        // tie for the last slot. Target index 5; finite donors and distances:
        //   4, 6 (d=1), 3, 7 (d=2), 2 (d=3), then a tie at d=4 between
        //   index 1 (value 0) and index 9 (value 600).
        // Lower index wins: mean = (0+2+3+4+6+7)/6; the upper-index choice
        // would give (600+2+3+4+6+7)/6 instead.
        let vals = vec![
            f32::NAN,
            0.0,
            2.0,
            3.0,
            4.0,
            f32::NAN,
            6.0,
            7.0,
            f32::NAN,
            600.0,
            f32::NAN,
        ];
        let mut r = record_with(vals);
        repair_nonfinite(&mut r).unwrap();
        assert_eq!(r.lead(0)[5], (22.0f64 / 6.0) as f32);
    }

    #[test]
    fn inf_counts_as_missing() {
        let mut r = record_with(vec![1.0, f32::INFINITY, 3.0, 4.0, 5.0, 6.0, 7.0]);
        repair_nonfinite(&mut r).unwrap();
        assert_eq!(r.lead(0)[1], (1.0 + 3.0 + 4.0 + 5.0 + 6.0 + 7.0) / 6.0);
    }

    #[test]
    fn too_few_finite_samples_is_irreparable() {
        let mut r = record_with(vec![1.0, 2.0, 3.0, 4.0, 5.0, f32::NAN, f32::NAN]);
        assert!(matches!(
            repair_nonfinite(&mut r),
            Err(SignalError::IrreparableLead { lead: 0, finite: 5 })
        ));
        // Six finite donors is the minimum that still works.
        let mut ok = record_with(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, f32::NAN]);
        repair_nonfinite(&mut ok).unwrap();
        assert_eq!(ok.lead(0)[6], 3.5);
    }

    #[test]
    fn all_finite_lead_is_untouched_and_repair_is_idempotent() {
        let vals = vec![1.0, 2.0, f32::NAN, 4.0, 5.0, 6.0, 7.0, 8.0];
        let mut r = record_with(vals);
        repair_nonfinite(&mut r).unwrap();
        let once = r.lead(0).to_vec();
        repair_nonfinite(&mut r).unwrap();
        assert_eq!(once, r.lead(0));
    }

    #[test]
    fn repairs_are_per_lead() {
        // Lead 1's NaN must not see lead 0's values.
        let mut data = vec![0.0f32; 16];
        for i in 0..8 {
            data[i] = 1000.0;
        }
        data[8..16].copy_from_slice(&[1.0, 2.0, 3.0, f32::NAN, 5.0, 6.0, 7.0, 8.0]);
        let mut r = EcgRecord::new("two", 2, 8, 100, data).unwrap();
        repair_nonfinite(&mut r).unwrap();
        assert_eq!(r.lead(1)[3], (1.0 + 2.0 + 3.0 + 5.0 + 6.0 + 7.0) / 6.0);
    }
}
