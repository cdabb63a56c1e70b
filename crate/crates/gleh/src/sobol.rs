//! Sobol low-discrepancy sequence for probe-point generation.
//!
//! Coefficient-field assumptions (boundedness, invertibility of theta) can
//! only be spot-checked; probes default to Sobol points inside a
//! user-declared box. Direction numbers cover up to 16 dimensions, far more
//! than the state dimensions this library targets.

const BITS: u32 = 32;

// (degree s, coefficient bits a, initial direction numbers m_1..m_s) for
// dimensions 2..=16; dimension 1 is the van der Corput sequence in base 2.
const TABLE: [(u32, u32, &[u32]); 15] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
];

/// Maximum supported dimension.
pub const MAX_DIM: usize = TABLE.len() + 1;

fn direction_numbers(dim_index: usize) -> [u32; BITS as usize] {
    let mut v = [0u32; BITS as usize];
    if dim_index == 0 {
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = 1u32 << (BITS - 1 - k as u32);
        }
        return v;
    }
    let (s, a, m_init) = TABLE[dim_index - 1];
    let s = s as usize;
    let mut m = vec![0u32; BITS as usize];
    m[..s].copy_from_slice(m_init);
    for k in s..BITS as usize {
        let mut value = m[k - s] ^ (m[k - s] << s);
        for i in 1..s {
            if (a >> (s - 1 - i)) & 1 == 1 {
                value ^= m[k - i] << i;
            }
        }
        m[k] = value;
    }
    for (k, slot) in v.iter_mut().enumerate() {
        *slot = m[k] << (BITS - 1 - k as u32);
    }
    v
}

/// Generates `count` Sobol points in the unit cube `[0,1)^dim` (Gray-code
/// order, skipping the all-zeros point).
pub fn sobol_points(dim: usize, count: usize) -> Vec<Vec<f64>> {
    assert!(dim >= 1 && dim <= MAX_DIM, "sobol supports 1..={MAX_DIM} dims");
    let dirs: Vec<[u32; BITS as usize]> = (0..dim).map(direction_numbers).collect();
    let mut state = vec![0u32; dim];
    let mut out = Vec::with_capacity(count);
    let scale = 1.0 / (1u64 << BITS) as f64;
    for n in 0..count {
        let bit = (n + 1).trailing_zeros() as usize;
        for (d, s) in state.iter_mut().enumerate() {
            *s ^= dirs[d][bit];
        }
        out.push(state.iter().map(|&x| x as f64 * scale).collect());
    }
    out
}

/// Maps Sobol points into the box `[lo, hi]` componentwise.
pub fn sobol_in_box(lo: &[f64], hi: &[f64], count: usize) -> Vec<Vec<f64>> {
    assert_eq!(lo.len(), hi.len());
    sobol_points(lo.len(), count)
        .into_iter()
        .map(|p| {
            p.iter()
                .zip(lo.iter().zip(hi))
                .map(|(&u, (&a, &b))| a + u * (b - a))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_fill_unit_square_evenly() {
        let pts = sobol_points(2, 128);
        assert_eq!(pts.len(), 128);
        // Low-discrepancy: each quadrant holds close to a quarter of them.
        let mut counts = [0usize; 4];
        for p in &pts {
            let qx = usize::from(p[0] >= 0.5);
            let qy = usize::from(p[1] >= 0.5);
            counts[2 * qx + qy] += 1;
        }
        for c in counts {
            assert!((24..=40).contains(&c), "quadrant count {c}");
        }
    }

    #[test]
    fn box_mapping_respects_bounds() {
        let pts = sobol_in_box(&[-2.0, 1.0], &[2.0, 3.0], 64);
        for p in pts {
            assert!((-2.0..=2.0).contains(&p[0]));
            assert!((1.0..=3.0).contains(&p[1]));
        }
    }

    #[test]
    fn higher_dims_stay_in_unit_cube() {
        for p in sobol_points(MAX_DIM, 257) {
            for x in p {
                assert!((0.0..1.0).contains(&x));
            }
        }
    }
}
