//! Orbit schedules: block lengths, membership of iterate indices, and
//! natural-density arithmetic, all in exact integer arithmetic.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Q = Ratio<u64>;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("m must be strictly increasing (m_{j} = {a} then m_{next} = {b})", next = .j + 1)]
    NotIncreasing { j: usize, a: u64, b: u64 },
    #[error("m_1 must be positive")]
    ZeroM1,
    #[error("explicit schedule has {len} terms, term {j} requested")]
    Exhausted { j: usize, len: usize },
    #[error("n and m must have the same length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("lambda must lie in [0, 1], got {0}")]
    LambdaRange(String),
    #[error("cannot parse {0:?} as a decimal fraction")]
    Parse(String),
    #[error("center {l} out of range 1..={p}")]
    CenterOutOfRange { l: usize, p: usize },
    #[error("lambdas must be positive and sum to at most 1")]
    BadLambdas,
}

/// Rule producing `(n_j, m_j)` for `j >= 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    /// `n_j = j^2` when `lambda = 1`, else `ceil(lambda/(1-lambda) j)`; `m_j = j + m_offset`.
    Lambda { num: u64, den: u64, m_offset: u64 },
    Explicit { n: Vec<u64>, m: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub rule: Rule,
    /// Shift `C`: `n_j -> max(0, n_j - C)`, `m_j -> m_j + min(n_j, C)`.
    #[serde(default)]
    pub shift: u64,
}

/// Parse a non-negative decimal like `0.3` or `1` or `3/10` into an exact ratio.
pub fn parse_ratio(s: &str) -> Result<Q, ScheduleError> {
    let err = || ScheduleError::Parse(s.to_string());
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let a: u64 = a.trim().parse().map_err(|_| err())?;
        let b: u64 = b.trim().parse().map_err(|_| err())?;
        if b == 0 {
            return Err(err());
        }
        return Ok(Q::new(a, b));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() || frac.len() > 18 {
        return Err(err());
    }
    let digits = |t: &str| t.is_empty() || t.bytes().all(|c| c.is_ascii_digit());
    if !digits(int) || !digits(frac) {
        return Err(err());
    }
    let whole: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| err())? };
    let den = 10u64.pow(frac.len() as u32);
    let f: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| err())? };
    Ok(Q::new(whole.checked_mul(den).and_then(|w| w.checked_add(f)).ok_or_else(err)?, den))
}

impl Schedule {
    pub fn explicit(n: Vec<u64>, m: Vec<u64>) -> Result<Schedule, ScheduleError> {
        let s = Schedule { rule: Rule::Explicit { n, m }, shift: 0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        match &self.rule {
            Rule::Explicit { n, m } => {
                if n.len() != m.len() {
                    return Err(ScheduleError::LengthMismatch(n.len(), m.len()));
                }
                if m.first() == Some(&0) {
                    return Err(ScheduleError::ZeroM1);
                }
                for (j, w) in m.windows(2).enumerate() {
                    if w[1] <= w[0] {
                        return Err(ScheduleError::NotIncreasing { j: j + 1, a: w[0], b: w[1] });
                    }
                }
                Ok(())
            }
            Rule::Lambda { num, den, .. } => {
                if *den == 0 || num > den {
                    Err(ScheduleError::LambdaRange(format!("{num}/{den}")))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Number of terms available (`None` means unbounded).
    pub fn len(&self) -> Option<usize> {
        match &self.rule {
            Rule::Explicit { n, .. } => Some(n.len()),
            Rule::Lambda { .. } => None,
        }
    }

    fn raw(&self, j: usize) -> Result<(u64, u64), ScheduleError> {
        if j == 0 {
            return Ok((0, 0));
        }
        match &self.rule {
            Rule::Explicit { n, m } => match (n.get(j - 1), m.get(j - 1)) {
                (Some(a), Some(b)) => Ok((*a, *b)),
                _ => Err(ScheduleError::Exhausted { j, len: n.len() }),
            },
            Rule::Lambda { num, den, m_offset } => {
                let j64 = j as u64;
                let n = if num == den {
                    j64 * j64
                } else {
                    let (a, b) = (*num as u128, (*den - *num) as u128);
                    ((a * j as u128).div_ceil(b)) as u64
                };
                Ok((n, j64 + m_offset))
            }
        }
    }

    /// `(n_j, m_j)` after the shift, with `n_0 = m_0 = 0`.
    pub fn term(&self, j: usize) -> Result<(u64, u64), ScheduleError> {
        let (n, m) = self.raw(j)?;
        if j == 0 {
            return Ok((0, 0));
        }
        Ok((n.saturating_sub(self.shift), m + n.min(self.shift)))
    }

    pub fn n(&self, j: usize) -> u64 {
        self.term(j).map(|t| t.0).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn m(&self, j: usize) -> u64 {
        self.term(j).map(|t| t.1).unwrap_or_else(|e| panic!("{e}"))
    }

    /// `N_j = sum_{i <= j} n_i + m_i`.
    pub fn cumulative_n(&self, j: usize) -> Result<u64, ScheduleError> {
        let mut acc = 0;
        for i in 1..=j {
            let (n, m) = self.term(i)?;
            acc += n + m;
        }
        Ok(acc)
    }

    /// Block index `p` with `N_p < n <= N_{p+1}`, plus `N_p`.
    fn block_of(&self, n: u64) -> Result<(usize, u64), ScheduleError> {
        let mut p = 0;
        let mut np = 0;
        loop {
            let (a, b) = self.term(p + 1)?;
            if n <= np + a + b {
                return Ok((p, np));
            }
            np += a + b;
            p += 1;
        }
    }

    /// True iff `N_p < n <= N_p + n_{p+1}` for some `p >= 0`.
    pub fn in_d(&self, n: u64) -> Result<bool, ScheduleError> {
        if n == 0 {
            return Ok(true);
        }
        let (p, np) = self.block_of(n)?;
        Ok(n <= np + self.term(p + 1)?.0)
    }

    /// For an out-of-D index, the translate `k` with the iterate in `B_0 + k`
    /// (counting from the first step after the in-D block).
    pub fn band_offset(&self, n: u64) -> Result<Option<u64>, ScheduleError> {
        if n == 0 {
            return Ok(None);
        }
        let (p, np) = self.block_of(n)?;
        let first = np + self.term(p + 1)?.0;
        Ok(if n > first { Some(n - first - 1) } else { None })
    }

    /// Number of `n` in `1..=k` with `in_d(n)`.
    pub fn count(&self, k: u64) -> Result<u64, ScheduleError> {
        let mut acc = 0;
        let mut np = 0;
        let mut p = 0;
        while np < k {
            let (a, b) = self.term(p + 1)?;
            acc += a.min(k - np);
            np += a + b;
            p += 1;
        }
        Ok(acc)
    }

    /// `Delta(k) = count(k) / k`, exact.
    pub fn density(&self, k: u64) -> Result<Q, ScheduleError> {
        assert!(k >= 1, "density needs k >= 1");
        Ok(Q::new(self.count(k)?, k))
    }

    /// `p_k` with `N_{p_k} <= k < N_{p_k + 1}`.
    pub fn p_of(&self, k: u64) -> Result<usize, ScheduleError> {
        let mut p = 0;
        let mut np = 0;
        loop {
            let (a, b) = self.term(p + 1)?;
            if k < np + a + b {
                return Ok(p);
            }
            np += a + b;
            p += 1;
        }
    }

    /// The sandwich `S_p / N_{p+1} <= Delta(k) <= S_{p+1} / (N_p + n_{p+1})`
    /// with `p = p_k` and `S_p = sum_{j<=p} n_j`.
    pub fn density_bounds(&self, k: u64) -> Result<(Q, Q), ScheduleError> {
        let p = self.p_of(k)?;
        let mut s = 0;
        let mut np = 0;
        for i in 1..=p {
            let (a, b) = self.term(i)?;
            s += a;
            np += a + b;
        }
        let (a, b) = self.term(p + 1)?;
        let lower = Q::new(s, np + a + b);
        let den = np + a;
        let upper = if den == 0 { Q::from_integer(1) } else { Q::new(s + a, den) };
        Ok((lower, upper))
    }
}

/// The displayed schedule for a rational `lambda`: `m_j = j + m_offset`.
pub fn lambda_schedule(lambda: Q, m_offset: u64) -> Result<Schedule, ScheduleError> {
    if lambda > Q::from_integer(1) {
        return Err(ScheduleError::LambdaRange(lambda.to_string()));
    }
    Ok(Schedule { rule: Rule::Lambda { num: *lambda.numer(), den: *lambda.denom(), m_offset }, shift: 0 })
}

pub fn shifted_schedule(s: &Schedule, c: u64) -> Schedule {
    let mut out = s.clone();
    out.shift += c;
    out
}

/// `p` centers visited cyclically: in stage `j`, `n^l_j = ceil(lambda_l j^2)`
/// iterates in `D_l`, then `m^l_j = j` iterates outside all centers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiCenterSchedule {
    pub lambdas: Vec<(u64, u64)>,
    /// Index of the filler center added when the lambdas sum below one.
    pub filler: Option<usize>,
}

impl MultiCenterSchedule {
    pub fn new(lambdas: &[Q]) -> Result<MultiCenterSchedule, ScheduleError> {
        let total: Q = lambdas.iter().copied().sum();
        if lambdas.is_empty() || lambdas.iter().any(|l| *l.numer() == 0) || total > Q::from_integer(1) {
            return Err(ScheduleError::BadLambdas);
        }
        let mut v: Vec<(u64, u64)> = lambdas.iter().map(|l| (*l.numer(), *l.denom())).collect();
        let mut filler = None;
        if total < Q::from_integer(1) {
            let rest = Q::from_integer(1) - total;
            filler = Some(v.len());
            v.push((*rest.numer(), *rest.denom()));
        }
        Ok(MultiCenterSchedule { lambdas: v, filler })
    }

    /// Centers including any filler.
    pub fn centers(&self) -> usize {
        self.lambdas.len()
    }

    pub fn n(&self, l: usize, j: usize) -> u64 {
        let (a, b) = self.lambdas[l - 1];
        let j2 = (j as u128) * (j as u128);
        ((a as u128 * j2).div_ceil(b as u128)) as u64
    }

    pub fn m(&self, _l: usize, j: usize) -> u64 {
        j as u64
    }

    /// Exact count of `n <= k` whose iterate sits in `D_l`.
    pub fn count(&self, l: usize, k: u64) -> Result<u64, ScheduleError> {
        let p = self.centers();
        if l == 0 || l > p {
            return Err(ScheduleError::CenterOutOfRange { l, p });
        }
        let mut t = 0;
        let mut acc = 0;
        let mut j = 1;
        while t < k {
            for c in 1..=p {
                let a = self.n(c, j);
                if c == l {
                    acc += a.min(k.saturating_sub(t));
                }
                t += a + self.m(c, j);
            }
            j += 1;
        }
        Ok(acc)
    }

    pub fn density(&self, l: usize, k: u64) -> Result<Q, ScheduleError> {
        Ok(Q::new(self.count(l, k)?, k))
    }

    /// Fraction of `n <= k` in no center.
    pub fn band_density(&self, k: u64) -> Q {
        let inside: u64 = (1..=self.centers()).map(|l| self.count(l, k).unwrap()).sum();
        Q::new(k - inside, k)
    }

    /// Sandwich for center `l` around full cycles `q` with `T_q <= k < T_{q+1}`.
    pub fn density_bounds(&self, l: usize, k: u64) -> Result<(Q, Q), ScheduleError> {
        let p = self.centers();
        if l == 0 || l > p {
            return Err(ScheduleError::CenterOutOfRange { l, p });
        }
        let cycle = |j: usize| (1..=p).map(|c| self.n(c, j) + self.m(c, j)).sum::<u64>();
        let (mut t, mut s, mut j) = (0u64, 0u64, 1usize);
        while t + cycle(j) <= k {
            t += cycle(j);
            s += self.n(l, j);
            j += 1;
        }
        let a = self.n(l, j);
        let lower = Q::new(s, t + cycle(j));
        let upper = if t + a == 0 { Q::from_integer(1) } else { Q::new(s + a, t + a) };
        Ok((lower, upper))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn squares(off: u64) -> Schedule {
        lambda_schedule(Q::from_integer(1), off).unwrap()
    }

    /// Walks the orbit step by step; shares nothing with the block arithmetic.
    fn walk(s: &Schedule, k: u64) -> Vec<bool> {
        let mut out = Vec::with_capacity(k as usize);
        let mut j = 1;
        while (out.len() as u64) < k {
            let (n, m) = s.term(j).unwrap();
            out.extend(std::iter::repeat_n(true, n as usize));
            out.extend(std::iter::repeat_n(false, m as usize));
            j += 1;
        }
        out.truncate(k as usize);
        out
    }

    #[test]
    fn cumulative_examples() {
        let s = squares(1);
        assert_eq!(s.cumulative_n(0), Ok(0));
        assert_eq!((1..=3).map(|j| s.cumulative_n(j).unwrap()).collect::<Vec<_>>(), vec![3, 10, 23]);
        let s = squares(0);
        assert_eq!((1..=3).map(|j| s.cumulative_n(j).unwrap()).collect::<Vec<_>>(), vec![2, 8, 20]);
    }

    #[test]
    fn in_d_examples() {
        let s = squares(1);
        assert_eq!(s.in_d(1), Ok(true));
        assert_eq!(s.in_d(2), Ok(false));
        assert_eq!(s.in_d(4), Ok(true));
        let hits: Vec<u64> = (1..=23).filter(|n| s.in_d(*n).unwrap()).collect();
        assert_eq!(hits, vec![1, 4, 5, 6, 7, 11, 12, 13, 14, 15, 16, 17, 18, 19]);
        assert_eq!(s.band_offset(2), Ok(Some(0)));
        assert_eq!(s.band_offset(3), Ok(Some(1)));
        assert_eq!(s.band_offset(23), Ok(Some(3)));
    }

    #[test]
    fn density_examples() {
        let s = squares(0);
        assert_eq!(s.density(2), Ok(Q::new(1, 2)));
        assert_eq!(s.density(8), Ok(Q::new(5, 8)));
        let z = Schedule::explicit(vec![0, 3], vec![2, 3]).unwrap();
        assert_eq!(z.density(z.cumulative_n(1).unwrap()), Ok(Q::from_integer(0)));
    }

    #[test]
    fn bounds_example() {
        let s = squares(0);
        assert_eq!(s.p_of(8), Ok(2));
        let (lo, hi) = s.density_bounds(8).unwrap();
        assert_eq!(lo, Q::new(5, 20));
        assert_eq!(hi, Q::new(14, 17));
        assert!(lo <= Q::new(5, 8) && Q::new(5, 8) <= hi);
    }

    #[test]
    fn lambda_examples() {
        let one = squares(0);
        assert_eq!((1..=4).map(|j| one.n(j)).collect::<Vec<_>>(), vec![1, 4, 9, 16]);
        let half = lambda_schedule(parse_ratio("0.5").unwrap(), 0).unwrap();
        assert_eq!((1..=4).map(|j| half.n(j)).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        let zero = lambda_schedule(Q::from_integer(0), 0).unwrap();
        assert!((1..=50).all(|j| zero.n(j) == 0));
        let third = lambda_schedule(parse_ratio("0.3").unwrap(), 0).unwrap();
        // 3/7 j rounded up
        assert_eq!((1..=7).map(|j| third.n(j)).collect::<Vec<_>>(), vec![1, 1, 2, 2, 3, 3, 3]);
    }

    #[test]
    fn shift_examples() {
        let s = squares(0);
        assert_eq!(shifted_schedule(&s, 0), s);
        let t = shifted_schedule(&s, 2);
        assert_eq!(t.term(1), Ok((0, 2)));
        assert_eq!(t.term(2), Ok((2, 4)));
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_ratio("0.3"), Ok(Q::new(3, 10)));
        assert_eq!(parse_ratio("1"), Ok(Q::from_integer(1)));
        assert_eq!(parse_ratio(".25"), Ok(Q::new(1, 4)));
        assert_eq!(parse_ratio("2/6"), Ok(Q::new(1, 3)));
        assert!(parse_ratio("-1").is_err());
        assert!(parse_ratio("x").is_err());
        assert!(lambda_schedule(parse_ratio("1.5").unwrap(), 0).is_err());
    }

    #[test]
    fn explicit_validation() {
        assert!(matches!(Schedule::explicit(vec![1, 1], vec![3, 3]), Err(ScheduleError::NotIncreasing { .. })));
        assert!(Schedule::explicit(vec![1], vec![2, 3]).is_err());
        let s = Schedule::explicit(vec![1], vec![2]).unwrap();
        assert_eq!(s.in_d(3), Ok(false));
        assert!(matches!(s.in_d(4), Err(ScheduleError::Exhausted { .. })));
    }

    #[test]
    fn limit_densities() {
        for (lam, want) in [("0", 0.0), ("0.3", 0.3), ("0.5", 0.5), ("1", 1.0)] {
            let s = lambda_schedule(parse_ratio(lam).unwrap(), 0).unwrap();
            let d = s.density(1_000_000).unwrap();
            let brute = walk(&s, 1_000_000).iter().filter(|b| **b).count() as u64;
            assert_eq!(*d.numer() * (1_000_000 / d.denom()), brute);
            let v = *d.numer() as f64 / *d.denom() as f64;
            assert!((v - want).abs() < 0.02, "{lam}: {v}");
            for c in [1, 5, 10] {
                let t = shifted_schedule(&s, c).density(1_000_000).unwrap();
                let w = *t.numer() as f64 / *t.denom() as f64;
                // each started block loses at most C in-D iterates
                let blocks = s.p_of(1_000_000).unwrap() as f64 + 1.0;
                assert!(w <= v && v - w <= c as f64 * blocks / 1e6, "{lam} C={c}: {w} vs {v}");
            }
        }
    }

    #[test]
    fn multi_center_single_reduces() {
        let mc = MultiCenterSchedule::new(&[Q::from_integer(1)]).unwrap();
        let s = squares(0);
        for k in [1, 7, 100, 12345] {
            assert_eq!(mc.density(1, k).unwrap(), s.density(k).unwrap());
        }
    }

    #[test]
    fn multi_center_partition_and_limit() {
        let ls: Vec<Q> = ["0.5", "0.3", "0.2"].iter().map(|s| parse_ratio(s).unwrap()).collect();
        let mc = MultiCenterSchedule::new(&ls).unwrap();
        assert_eq!(mc.filler, None);
        let k = 1_000_000;
        let mut total = mc.band_density(k);
        for (l, lam) in ls.iter().enumerate() {
            let d = mc.density(l + 1, k).unwrap();
            total += d;
            let v = *d.numer() as f64 / *d.denom() as f64;
            let want = *lam.numer() as f64 / *lam.denom() as f64;
            assert!((v - want).abs() < 0.02);
            let (lo, hi) = mc.density_bounds(l + 1, k).unwrap();
            assert!(lo <= d && d <= hi);
        }
        assert_eq!(total, Q::from_integer(1));
        assert!(matches!(mc.count(4, 10), Err(ScheduleError::CenterOutOfRange { .. })));
        let half = MultiCenterSchedule::new(&[Q::new(1, 2), Q::new(1, 2)]).unwrap();
        for k in [100u64, 1000, 10000] {
            let a = half.count(1, k).unwrap() as i64;
            let b = half.count(2, k).unwrap() as i64;
            // the blocks in flight differ by at most one cycle's worth
            let q = (k as f64).cbrt() * 2.0;
            assert!(((a - b).abs() as f64) <= q * q, "{k}: {a} {b}");
        }
    }

    #[test]
    fn filler_center() {
        let mc = MultiCenterSchedule::new(&[Q::new(1, 4)]).unwrap();
        assert_eq!(mc.filler, Some(1));
        assert_eq!(mc.lambdas[1], (3, 4));
        assert!(MultiCenterSchedule::new(&[Q::new(3, 4), Q::new(1, 2)]).is_err());
    }

    proptest! {
        #[test]
        fn brute_force_agreement(lam in 0u64..=10, off in 0u64..3, c in 0u64..6, k in 1u64..3000) {
            let s = shifted_schedule(&lambda_schedule(Q::new(lam, 10), off).unwrap(), c);
            let w = walk(&s, k);
            prop_assert_eq!(s.count(k).unwrap(), w.iter().filter(|b| **b).count() as u64);
            for n in [1, k / 2 + 1, k] {
                prop_assert_eq!(s.in_d(n).unwrap(), w[(n - 1) as usize]);
                prop_assert_eq!(s.in_d(n).unwrap(), s.band_offset(n).unwrap().is_none());
            }
        }

        #[test]
        fn sandwich_brackets(lam in 1u64..=10, off in 0u64..3, k in 1u64..10_000) {
            let s = lambda_schedule(Q::new(lam, 10), off).unwrap();
            prop_assume!(k >= s.cumulative_n(1).unwrap());
            let d = s.density(k).unwrap();
            let (lo, hi) = s.density_bounds(k).unwrap();
            prop_assert!(lo <= d && d <= hi);
        }

        #[test]
        fn shift_preserves_n(lam in 0u64..=10, c in 0u64..20, j in 0usize..40) {
            let s = lambda_schedule(Q::new(lam, 10), 0).unwrap();
            prop_assert_eq!(shifted_schedule(&s, c).cumulative_n(j), s.cumulative_n(j));
        }
    }
}
