//! Small dense-vector helpers over `f64` slices.

/// Norms below this are treated as zero when normalizing.
pub const ZERO_NORM: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unit vector in the direction of `a`; the zero vector maps to itself.
pub fn normalized(a: &[f64]) -> Vec<f64> {
    let n = norm(a);
    if n < ZERO_NORM {
        vec![0.0; a.len()]
    } else {
        a.iter().map(|x| x / n).collect()
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Arithmetic mean of equal-width vectors. Returns `None` for an empty input.
pub fn mean<'a, I>(vectors: I, width: usize) -> Option<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut acc = vec![0.0; width];
    let mut n = 0usize;
    for v in vectors {
        axpy(1.0, v, &mut acc);
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let inv = 1.0 / n as f64;
    acc.iter_mut().for_each(|x| *x *= inv);
    Some(acc)
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Little-endian byte image of a vector, used for content hashing.
pub fn to_le_bytes(a: &[f64]) -> Vec<u8> {
    a.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn from_le_bytes(bytes: &[u8]) -> Option<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizing_zero_is_zero() {
        assert_eq!(normalized(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn mean_of_nothing() {
        assert!(mean(std::iter::empty::<&[f64]>(), 3).is_none());
    }

    #[test]
    fn le_bytes_round_trip() {
        let v = vec![1.5, -2.25, f64::MIN_POSITIVE];
        assert_eq!(from_le_bytes(&to_le_bytes(&v)).unwrap(), v);
    }
}
