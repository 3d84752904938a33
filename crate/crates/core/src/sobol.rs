//! Unscrambled Sobol sequence, Gray-code ordering, Joe-Kuo direction numbers.
//!
//! Dimension 1 is the van der Corput sequence in base 2; dimensions 2..=8 use the
//! primitive polynomials and initial direction numbers of `new-joe-kuo-6.21201`.

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 8;
const BITS: usize = 32;

/// (degree s, coefficient a, initial m_1..m_s) per dimension 2..=8.
const DIRECTIONS: [(u32, u32, &[u32]); MAX_DIM - 1] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
];

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let (s, a, m) = DIRECTIONS[dim - 1];
    let s = s as usize;
    for k in 0..s {
        v[k] = m[k] << (BITS - 1 - k);
    }
    for k in s..BITS {
        let mut x = v[k - s] ^ (v[k - s] >> s);
        for j in 1..s {
            if (a >> (s - 1 - j)) & 1 == 1 {
                x ^= v[k - j];
            }
        }
        v[k] = x;
    }
    v
}

/// Iterator over Sobol points; state is the integer lattice point of the last index.
#[derive(Debug, Clone)]
pub struct Sobol {
    v: Vec<[u32; BITS]>,
    state: Vec<u32>,
    index: u64,
}

impl Sobol {
    /// Positions the generator so that the next point is the one at `skip`.
    pub fn new(dim: usize, skip: u64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::UnsupportedDimension(dim));
        }
        let v: Vec<_> = (0..dim).map(direction_numbers).collect();
        let gray = skip ^ (skip >> 1);
        let state = v
            .iter()
            .map(|vd| {
                (0..BITS)
                    .filter(|b| (gray >> b) & 1 == 1)
                    .fold(0u32, |acc, b| acc ^ vd[b])
            })
            .collect();
        Ok(Self { v, state, index: skip })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// Writes the current point into `out` and advances.
    pub fn next_into(&mut self, out: &mut [f64]) {
        const SCALE: f64 = 1.0 / (1u64 << BITS) as f64;
        for (o, s) in out.iter_mut().zip(&self.state) {
            *o = *s as f64 * SCALE;
        }
        // x_{i+1} = x_i ^ v[c], c = index of the lowest zero bit of i
        let c = self.index.trailing_ones() as usize;
        assert!(c < BITS, "Sobol index space exhausted");
        for (s, vd) in self.state.iter_mut().zip(&self.v) {
            *s ^= vd[c];
        }
        self.index += 1;
    }
}

/// Points `skip..skip+n` as an `n x dim` row-major matrix.
pub fn sobol_points(dim: usize, n: usize, skip: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::Size("sobol_points needs n >= 1".into()));
    }
    let mut gen = Sobol::new(dim, skip)?;
    Ok((0..n)
        .map(|_| {
            let mut p = vec![0.0; dim];
            gen.next_into(&mut p);
            p
        })
        .collect())
}
