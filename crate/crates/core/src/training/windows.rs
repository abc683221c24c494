use crate::autodiff::Tensor;
use crate::data::{SensorGrid, TrainingMask, N_FEATURES};

/// Current-time indices whose whole window (`n_slices` steps ending at the
/// index) is usable and lies inside one day.
pub fn window_times(grid: &SensorGrid, mask: &TrainingMask, n_slices: usize) -> Vec<usize> {
    let history = n_slices.saturating_sub(1);
    let mut out = Vec::new();
    for seg in grid.days() {
        let range = seg.range();
        let mut run = 0usize;
        for t in range {
            if mask.is_usable(t) {
                run += 1;
                if run > history {
                    out.push(t);
                }
            } else {
                run = 0;
            }
        }
    }
    out
}

/// Stacks the windows ending at `times` into model input rows, slice-major
/// within each window (oldest slice first). Steps before the start of the
/// day repeat the first step of the day.
pub fn window_batch(grid: &SensorGrid, times: &[usize], n_slices: usize) -> Tensor<f32> {
    let per = grid.n_nodes() * N_FEATURES;
    let mut data = Vec::with_capacity(times.len() * n_slices * per);
    for &t in times {
        let day_start = grid.days()[grid.day_of(t)].start;
        for j in 0..n_slices {
            let back = n_slices - 1 - j;
            let s = t.saturating_sub(back).max(day_start);
            data.extend_from_slice(grid.snapshot(s));
        }
    }
    Tensor::from_vec(times.len() * n_slices * grid.n_nodes(), N_FEATURES, data)
}

/// The current-slice targets for `times`, `[len * n_nodes x 3]`.
pub fn target_batch(grid: &SensorGrid, times: &[usize]) -> Tensor<f32> {
    window_batch(grid, times, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DayWindow, Feature};
    use chrono::NaiveDate;

    fn grid() -> SensorGrid {
        let d = |n| NaiveDate::from_ymd_opt(2023, 10, n).unwrap();
        let w = DayWindow::from_hours(4.0, 4.05, -5.0);
        let mut g = SensorGrid::empty(&w, &[d(2), d(3)], vec![63.0], 1).unwrap();
        for t in 0..g.n_times() {
            for f in Feature::ALL {
                g.set(t, 0, f, t as f32);
            }
        }
        g
    }

    #[test]
    fn windows_stay_inside_days_and_mask() {
        let g = grid();
        let per_day = g.days()[0].len;
        assert_eq!(per_day, 6);
        let all = TrainingMask::all_usable(g.n_times());
        assert_eq!(window_times(&g, &all, 1), (0..12).collect::<Vec<_>>());
        assert_eq!(window_times(&g, &all, 3), vec![2, 3, 4, 5, 8, 9, 10, 11]);
        let mut m = all.clone();
        m.mask_time(3);
        m.mask_time(9);
        assert_eq!(window_times(&g, &m, 2), vec![1, 2, 5, 7, 8, 11]);
        for t in window_times(&g, &m, 2) {
            assert!(m.is_usable(t) && m.is_usable(t - 1));
            assert_eq!(g.day_of(t), g.day_of(t - 1));
        }
    }

    #[test]
    fn batch_layout() {
        let g = grid();
        let b = window_batch(&g, &[8, 4], 3);
        let col: Vec<f32> = (0..6).map(|r| b.get(r, 0)).collect();
        assert_eq!(col, vec![6.0, 7.0, 8.0, 2.0, 3.0, 4.0]);
        // clamped at the day start
        let b = window_batch(&g, &[7], 3);
        assert_eq!((0..3).map(|r| b.get(r, 1)).collect::<Vec<_>>(), vec![6.0, 6.0, 7.0]);
        assert_eq!(target_batch(&g, &[5, 1]).data(), &[5.0, 5.0, 5.0, 1.0, 1.0, 1.0]);
    }
}
