use std::str::FromStr;

/// `start:stop:count` with both endpoints included; a count of one yields
/// `start` alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.start],
            n => (0..n)
                .map(|i| self.start + (self.stop - self.start) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, stop, count] = parts.as_slice() else {
            return Err(format!("grid `{s}` is not start:stop:count"));
        };
        let num = |v: &str| -> Result<f64, String> {
            let x: f64 = v.trim().parse().map_err(|_| format!("`{v}` is not a number"))?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(format!("`{v}` is not finite"))
            }
        };
        let count: usize = count.trim().parse().map_err(|_| format!("count `{count}` is not a whole number"))?;
        if count == 0 {
            return Err("grid count must be at least 1".into());
        }
        Ok(Grid {
            start: num(start)?,
            stop: num(stop)?,
            count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inclusive_endpoints() {
        let g: Grid = "0.3:3.0:50".parse().unwrap();
        let v = g.values();
        assert_eq!(v.len(), 50);
        assert_eq!(v[0], 0.3);
        assert!((v[49] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_point() {
        assert_eq!("2:5:1".parse::<Grid>().unwrap().values(), vec![2.0]);
    }

    #[test]
    fn malformed() {
        for bad in ["1:2", "a:2:3", "1:2:0", "1:2:-3", "1:inf:3", ""] {
            assert!(bad.parse::<Grid>().is_err(), "{bad}");
        }
    }
}
