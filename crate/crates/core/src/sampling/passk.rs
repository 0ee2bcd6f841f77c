use super::error::SamplingError;

/// Unbiased pass@k for one sample: `1 - C(n-c, k) / C(n, k)`, evaluated as a
/// running product to stay exact for large `n`.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64, SamplingError> {
    if k == 0 {
        return Err(SamplingError::KZero);
    }
    if k > n {
        return Err(SamplingError::KGreaterThanN { k, n });
    }
    if c > n {
        return Err(SamplingError::CountOutOfRange { c, n });
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut miss = 1.0;
    for i in 0..k {
        miss *= (n - c - i) as f64 / (n - i) as f64;
    }
    Ok(1.0 - miss)
}

/// Mean of [`pass_at_k`] over samples, each given as `(n, c)`.
pub fn mean_pass_at_k(samples: &[(usize, usize)], k: usize) -> Result<f64, SamplingError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &(n, c) in samples {
        total += pass_at_k(n, c, k)?;
    }
    Ok(total / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(pass_at_k(4, 4, 1), Ok(1.0));
        assert_eq!(pass_at_k(4, 0, 2), Ok(0.0));
        assert!((pass_at_k(4, 2, 2).unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(pass_at_k(4, 1, 5), Err(SamplingError::KGreaterThanN { k: 5, n: 4 }));
    }

    #[test]
    fn monotone_in_k() {
        for n in 1..=20 {
            for c in 0..=n {
                let mut prev = 0.0;
                for k in 1..=n {
                    let p = pass_at_k(n, c, k).unwrap();
                    assert!(p >= prev - 1e-15);
                    prev = p;
                }
            }
        }
    }
}
