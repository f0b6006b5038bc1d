//! Dense discrete factors and variable elimination.

use alloc::vec::Vec;

/// A non-negative table over a list of variables, row-major with the last
/// variable fastest.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Factor {
    pub vars: Vec<usize>,
    pub cards: Vec<usize>,
    pub values: Vec<f64>,
}

/// A product would exceed the cell cap; carries the requested size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct TooLarge(pub usize);

fn strides(cards: &[usize]) -> Vec<usize> {
    let mut s = alloc::vec![1; cards.len()];
    for k in (0..cards.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * cards[k + 1];
    }
    s
}

fn checked_size(cards: &[usize]) -> Option<usize> {
    cards.iter().try_fold(1usize, |acc, &c| acc.checked_mul(c))
}

impl Factor {
    pub fn new(vars: Vec<usize>, cards: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(vars.len(), cards.len());
        debug_assert_eq!(checked_size(&cards), Some(values.len()));
        Factor { vars, cards, values }
    }

    pub fn scalar(value: f64) -> Self {
        Factor { vars: Vec::new(), cards: Vec::new(), values: alloc::vec![value] }
    }

    pub fn card_of(&self, var: usize) -> Option<usize> {
        self.vars.iter().position(|&v| v == var).map(|k| self.cards[k])
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn scale(&mut self, by: f64) {
        self.values.iter_mut().for_each(|v| *v *= by);
    }

    pub fn rename(mut self, map: impl Fn(usize) -> usize) -> Self {
        self.vars.iter_mut().for_each(|v| *v = map(*v));
        self
    }

    /// Pointwise product over the union of variables: `self`'s variables
    /// first, then the new ones of `other`.
    pub fn product(&self, other: &Factor, cap: usize) -> Result<Factor, TooLarge> {
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        for (k, &v) in other.vars.iter().enumerate() {
            if !vars.contains(&v) {
                vars.push(v);
                cards.push(other.cards[k]);
            }
        }
        let size = checked_size(&cards).ok_or(TooLarge(usize::MAX))?;
        if size > cap {
            return Err(TooLarge(size));
        }
        let sa = self.strides_in(&vars);
        let sb = other.strides_in(&vars);
        let mut values = alloc::vec![0.0; size];
        let mut counter = alloc::vec![0usize; vars.len()];
        let (mut ia, mut ib) = (0usize, 0usize);
        for out in values.iter_mut() {
            *out = self.values[ia] * other.values[ib];
            for d in (0..vars.len()).rev() {
                counter[d] += 1;
                ia = ia.wrapping_add(sa[d]);
                ib = ib.wrapping_add(sb[d]);
                if counter[d] < cards[d] {
                    break;
                }
                ia = ia.wrapping_sub(sa[d] * cards[d]);
                ib = ib.wrapping_sub(sb[d] * cards[d]);
                counter[d] = 0;
            }
        }
        Ok(Factor { vars, cards, values })
    }

    /// Strides of this factor's variables laid out along `vars` (0 where absent).
    fn strides_in(&self, vars: &[usize]) -> Vec<usize> {
        let own = strides(&self.cards);
        vars.iter().map(|v| self.vars.iter().position(|w| w == v).map_or(0, |k| own[k])).collect()
    }

    /// Sums out every variable not in `keep` and lays the result out in the
    /// order of `keep`. Variables of `keep` missing from the factor are ignored.
    pub fn marginal(&self, keep: &[usize]) -> Factor {
        let keep: Vec<usize> = keep.iter().copied().filter(|v| self.vars.contains(v)).collect();
        let cards: Vec<usize> = keep.iter().map(|&v| self.card_of(v).unwrap_or(1)).collect();
        let out_strides = strides(&cards);
        let map: Vec<usize> =
            self.vars.iter().map(|v| keep.iter().position(|w| w == v).map_or(0, |k| out_strides[k])).collect();
        let mut values = alloc::vec![0.0; checked_size(&cards).unwrap_or(0)];
        let mut counter = alloc::vec![0usize; self.vars.len()];
        let mut io = 0usize;
        for &x in &self.values {
            values[io] += x;
            for d in (0..self.vars.len()).rev() {
                counter[d] += 1;
                io = io.wrapping_add(map[d]);
                if counter[d] < self.cards[d] {
                    break;
                }
                io = io.wrapping_sub(map[d] * self.cards[d]);
                counter[d] = 0;
            }
        }
        Factor { vars: keep, cards, values }
    }

    pub fn sum_out(&self, var: usize) -> Factor {
        let keep: Vec<usize> = self.vars.iter().copied().filter(|&v| v != var).collect();
        self.marginal(&keep)
    }

    /// Fixes `var` to `value` and drops it.
    pub fn restrict(&self, var: usize, value: usize) -> Factor {
        let Some(k) = self.vars.iter().position(|&v| v == var) else {
            return self.clone();
        };
        let st = strides(&self.cards);
        let outer = self.values.len() / (self.cards[k] * st[k]);
        let mut values = Vec::with_capacity(self.values.len() / self.cards[k]);
        for o in 0..outer {
            let start = o * self.cards[k] * st[k] + value * st[k];
            values.extend_from_slice(&self.values[start..start + st[k]]);
        }
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(k);
        cards.remove(k);
        Factor { vars, cards, values }
    }
}

/// Outcome of [`eliminate`]: the product of all factors summed down to the
/// kept variables, as `values · exp(log_scale)`.
pub(crate) struct Eliminated {
    pub factor: Factor,
    pub log_scale: f64,
}

/// Multiplies `factors` and sums out every variable not in `keep`, greedily
/// choosing the variable whose elimination creates the smallest factor.
///
/// Each intermediate product is rescaled by its maximum, the logs being
/// accumulated in `log_scale`, so long chains of small likelihoods do not
/// underflow.
///
/// Every kept variable must appear in some factor.
pub(crate) fn eliminate(mut factors: Vec<Factor>, keep: &[usize], cap: usize) -> Result<Eliminated, TooLarge> {
    let mut log_scale = 0.0;
    let mut rescale = |f: &mut Factor| {
        let m = f.max();
        if m > 0.0 && m.is_finite() && m != 1.0 {
            f.scale(1.0 / m);
            log_scale += libm::log(m);
        }
    };
    loop {
        let mut candidates: Vec<usize> =
            factors.iter().flat_map(|f| f.vars.iter().copied()).filter(|v| !keep.contains(v)).collect();
        candidates.sort_unstable();
        candidates.dedup();
        if candidates.is_empty() {
            break;
        }
        let cost = |v: usize| {
            let mut vars: Vec<(usize, usize)> = Vec::new();
            for f in factors.iter().filter(|f| f.vars.contains(&v)) {
                for (k, &w) in f.vars.iter().enumerate() {
                    if !vars.iter().any(|&(x, _)| x == w) {
                        vars.push((w, f.cards[k]));
                    }
                }
            }
            vars.iter().fold(1usize, |acc, &(_, c)| acc.saturating_mul(c))
        };
        let var = candidates.iter().copied().min_by_key(|&v| (cost(v), v)).expect("non-empty");
        let (with, without): (Vec<Factor>, Vec<Factor>) = factors.into_iter().partition(|f| f.vars.contains(&var));
        let mut product = Factor::scalar(1.0);
        for mut f in with {
            rescale(&mut f);
            product = product.product(&f, cap)?;
            rescale(&mut product);
        }
        let mut reduced = product.sum_out(var);
        rescale(&mut reduced);
        factors = without;
        factors.push(reduced);
    }
    let mut product = Factor::scalar(1.0);
    for mut f in factors {
        rescale(&mut f);
        product = product.product(&f, cap)?;
        rescale(&mut product);
    }
    Ok(Eliminated { factor: product.marginal(keep), log_scale })
}
