use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Spectrogram frame rate; spectrogram frame `j` is centred on grid frame `j`.
pub const SPEC_RATE: f64 = 100.0;

/// Audio features the denoiser is conditioned on.
///
/// Feature frames flagged invalid are never read by the network: they are
/// swapped for a learned null embedding before any attention.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionBundle {
    /// `(T_s, spec_dim)`
    pub spec: Tensor,
    pub spec_valid: Vec<bool>,
    /// `(T_m, sem_dim)`
    pub sem: Tensor,
    pub sem_valid: Vec<bool>,
    /// Semantic frames per second.
    pub sem_rate: f64,
    /// Time of semantic frame 0 relative to grid frame 0, seconds.
    pub sem_offset: f64,
    /// Position of grid frame 0 within the source clip, seconds.
    pub start_time: f64,
}

impl ConditionBundle {
    /// All frames valid. `spec` and `sem` must be 2-D.
    pub fn new(spec: Tensor, sem: Tensor, sem_rate: f64) -> Result<Self> {
        for (name, t) in [("spec", &spec), ("sem", &sem)] {
            if t.shape().len() != 2 {
                return Err(Error::invalid(format!(
                    "{name} features must be 2-D, got shape {:?}",
                    t.shape()
                )));
            }
        }
        Ok(ConditionBundle {
            spec_valid: vec![true; spec.shape()[0]],
            sem_valid: vec![true; sem.shape()[0]],
            spec,
            sem,
            sem_rate,
            sem_offset: 0.5 / sem_rate,
            start_time: 0.0,
        })
    }

    pub fn n_spec_frames(&self) -> usize {
        self.spec.shape()[0]
    }

    pub fn n_sem_frames(&self) -> usize {
        self.sem.shape()[0]
    }

    pub fn spec_dim(&self) -> usize {
        self.spec.shape()[1]
    }

    pub fn sem_dim(&self) -> usize {
        self.sem.shape()[1]
    }

    /// Seconds from grid frame 0 to spectrogram frame `j`.
    pub fn spec_time(&self, j: usize) -> f64 {
        j as f64 / SPEC_RATE
    }

    /// Seconds from grid frame 0 to semantic frame `j`.
    pub fn sem_time(&self, j: usize) -> f64 {
        j as f64 / self.sem_rate + self.sem_offset
    }

    pub fn n_valid(&self) -> (usize, usize) {
        (
            self.spec_valid.iter().filter(|&&v| v).count(),
            self.sem_valid.iter().filter(|&&v| v).count(),
        )
    }

    pub fn drop_all(&mut self) {
        self.spec_valid.iter_mut().for_each(|v| *v = false);
        self.sem_valid.iter_mut().for_each(|v| *v = false);
    }

    /// Invalidate every frame of both streams whose time falls in `[start, end)`.
    pub fn drop_time_range(&mut self, start: f64, end: f64) {
        for j in 0..self.spec_valid.len() {
            let t = self.spec_time(j);
            if t >= start && t < end {
                self.spec_valid[j] = false;
            }
        }
        for j in 0..self.sem_valid.len() {
            let t = self.sem_time(j);
            if t >= start && t < end {
                self.sem_valid[j] = false;
            }
        }
    }

    /// Features covering grid frames `[start, start + len)`.
    pub fn crop(&self, start: usize, len: usize) -> Result<ConditionBundle> {
        let end = start + len;
        if end > self.n_spec_frames() {
            return Err(Error::invalid(format!(
                "crop {start}..{end} exceeds {} spectrogram frames",
                self.n_spec_frames()
            )));
        }
        let t0 = start as f64 / SPEC_RATE;
        let t1 = end as f64 / SPEC_RATE;
        // semantic frames whose centre lies in [t0, t1)
        let first = |t: f64| -> usize {
            let j = ((t - self.sem_offset) * self.sem_rate - 1e-9).ceil().max(0.0) as usize;
            j.min(self.n_sem_frames())
        };
        let (m0, m1) = (first(t0), first(t1));
        Ok(ConditionBundle {
            spec: rows(&self.spec, start, end),
            spec_valid: self.spec_valid[start..end].to_vec(),
            sem: rows(&self.sem, m0, m1),
            sem_valid: self.sem_valid[m0..m1].to_vec(),
            sem_rate: self.sem_rate,
            sem_offset: self.sem_time(m0) - t0,
            start_time: self.start_time + t0,
        })
    }
}

fn rows(t: &Tensor, start: usize, end: usize) -> Tensor {
    let cols = t.shape()[1];
    Tensor::new(&[end - start, cols], t.data()[start * cols..end * cols].to_vec()).expect("row slice")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(ts: usize, tm: usize) -> ConditionBundle {
        let spec = Tensor::new(&[ts, 2], (0..ts * 2).map(|v| v as f64).collect()).unwrap();
        let sem = Tensor::new(&[tm, 3], (0..tm * 3).map(|v| v as f64).collect()).unwrap();
        ConditionBundle::new(spec, sem, 75.0).unwrap()
    }

    #[test]
    fn crop_keeps_times_aligned() {
        let b = bundle(500, 375);
        let c = b.crop(100, 128).unwrap();
        assert_eq!(c.n_spec_frames(), 128);
        assert_eq!(c.spec.data()[0], 200.0);
        let m0 = (c.sem.data()[0] / 3.0) as usize;
        for j in 0..c.n_sem_frames() {
            let abs = b.sem_time(m0 + j);
            assert!((c.sem_time(j) + 1.0 - abs).abs() < 1e-12);
            assert!(c.sem_time(j) >= 0.0 && c.sem_time(j) < 1.28);
        }
        assert!(c.n_sem_frames() == 96);
    }

    #[test]
    fn dropping_a_range_hits_both_streams() {
        let mut b = bundle(500, 375);
        b.drop_time_range(1.0, 2.0);
        let (s, m) = b.n_valid();
        assert_eq!(s, 400);
        assert_eq!(m, 300);
        b.drop_all();
        assert_eq!(b.n_valid(), (0, 0));
    }

    #[test]
    fn crop_out_of_range() {
        assert!(bundle(100, 75).crop(50, 51).is_err());
    }
}
