use crate::error::Error;
use crate::Result;

/// Uniform periodic grid on `T^3` with period 1 per axis, plus an optional
/// uniform time sampling for fields that carry time.
///
/// The Fourier index set is the centered cube of side `N`; pointwise
/// products of fields are only trusted on modes with `|n_i| <= kcap()`
/// (2/3-rule), which keeps products of kept modes alias-free.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3 {
    n: usize,
    time_samples: usize,
    dt: f64,
}

impl Grid3 {
    /// Spatial grid without time sampling. `n` must be a power of two, >= 4.
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::InvalidParam(format!(
                "grid resolution must be a power of two >= 4, got {n}"
            )));
        }
        Ok(Self { n, time_samples: 0, dt: 0.0 })
    }

    pub fn with_time(n: usize, time_samples: usize, dt: f64) -> Result<Self> {
        let mut g = Self::new(n)?;
        if time_samples > 0 && dt <= 0.0 {
            return Err(Error::InvalidParam("time spacing must be positive".into()));
        }
        g.time_samples = time_samples;
        g.dt = dt;
        Ok(g)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Spatial spacing 1/N.
    #[inline]
    pub fn dx(&self) -> f64 {
        1.0 / self.n as f64
    }

    #[inline]
    pub fn time_samples(&self) -> usize {
        self.time_samples
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of spatial points.
    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Largest per-axis mode kept under the 2/3 dealiasing rule.
    ///
    /// `kcap = floor((N-1)/3)` guarantees `N - 2*kcap >= kcap + 1`, so a
    /// product of two kept-mode fields never aliases back into kept modes.
    #[inline]
    pub fn kcap(&self) -> usize {
        (self.n - 1) / 3
    }

    /// Signed wavenumber of FFT index `m` along one axis.
    #[inline]
    pub fn wavenumber(&self, m: usize) -> i64 {
        let n = self.n as i64;
        let m = m as i64;
        if m <= n / 2 - 1 {
            m
        } else {
            m - n
        }
    }

    /// FFT index of signed wavenumber `k` (must satisfy |k| < N/2).
    #[inline]
    pub fn index_of(&self, k: i64) -> usize {
        let n = self.n as i64;
        debug_assert!(k.abs() < n / 2 + 1);
        ((k + n) % n) as usize
    }

    /// Flat index of the spatial point (i3, i2, i1), axis x1 fastest.
    #[inline]
    pub fn at(&self, i3: usize, i2: usize, i1: usize) -> usize {
        (i3 * self.n + i2) * self.n + i1
    }

    /// Iterate signed wavenumber triples `[k1, k2, k3]` with flat index.
    pub fn modes(&self) -> impl Iterator<Item = (usize, [i64; 3])> + '_ {
        let n = self.n;
        (0..n * n * n).map(move |idx| {
            let i1 = idx % n;
            let i2 = (idx / n) % n;
            let i3 = idx / (n * n);
            (idx, [self.wavenumber(i1), self.wavenumber(i2), self.wavenumber(i3)])
        })
    }

    /// Flat spectral index of the signed mode `[k1, k2, k3]`.
    #[inline]
    pub fn mode_index(&self, k: [i64; 3]) -> usize {
        self.at(self.index_of(k[2]), self.index_of(k[1]), self.index_of(k[0]))
    }

    /// Grid point coordinates `[x1, x2, x3]` of flat index.
    #[inline]
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let n = self.n;
        let h = self.dx();
        [(idx % n) as f64 * h, ((idx / n) % n) as f64 * h, (idx / (n * n)) as f64 * h]
    }
}
