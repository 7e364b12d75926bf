use super::vec3::{self, Vec3};
use crate::error::{Error, Result};

/// Greedy max-min subset of `m` indices beginning at `start`. Ties go to the
/// smallest index.
pub fn farthest_point_sample(points: &[Vec3], m: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!("farthest_point_sample: need 1 <= m <= {n}, got {m}")));
    }
    if start >= n {
        return Err(Error::InvalidArgument(format!("farthest_point_sample: start {start} out of range")));
    }
    let mut chosen = Vec::with_capacity(m);
    let mut best = vec![f64::INFINITY; n];
    let mut cur = start;
    loop {
        chosen.push(cur);
        if chosen.len() == m {
            return Ok(chosen);
        }
        let c = points[cur];
        let mut arg = usize::MAX;
        let mut far = f64::NEG_INFINITY;
        for (i, (p, b)) in points.iter().zip(best.iter_mut()).enumerate() {
            let d = vec3::dist2(*p, c);
            if d < *b {
                *b = d;
            }
            if *b > far {
                far = *b;
                arg = i;
            }
        }
        cur = arg;
    }
}

/// The point farthest from the centroid (smallest index on ties). Used as a
/// start that does not depend on the input order.
pub fn canonical_start(points: &[Vec3]) -> usize {
    let n = points.len().max(1) as f64;
    let c = points.iter().fold([0.0; 3], |a, &p| vec3::add(a, p)).map(|x| x / n);
    let mut arg = 0;
    let mut far = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = vec3::dist2(*p, c);
        if d > far {
            far = d;
            arg = i;
        }
    }
    arg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_example() {
        let p = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.9, 0.0, 0.0]];
        assert_eq!(farthest_point_sample(&p, 2, 0).unwrap(), vec![0, 1]);
        assert_eq!(farthest_point_sample(&p, 4, 0).unwrap(), vec![0, 1, 2, 3]);
        assert!(farthest_point_sample(&p, 5, 0).is_err());
        assert!(farthest_point_sample(&p, 0, 0).is_err());
    }

    #[test]
    fn canonical_start_ignores_order() {
        let p = [[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.5, 0.2, 0.0]];
        let q = [p[2], p[0], p[1]];
        assert_eq!(p[canonical_start(&p)], q[canonical_start(&q)]);
    }
}
