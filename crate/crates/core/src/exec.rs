//! Order-preserving data-parallel map over independent work items. Uses the
//! rayon pool when the `parallel` feature is on and a plain loop otherwise.

/// Maps `f` over `items`; results come back in submission order either way.
pub fn map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

/// Sequential reference path with the same contract as [`map`].
pub fn map_sequential<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}

/// `map` over fallible work; the first error in submission order wins.
pub fn try_map<T, R, E, F>(items: Vec<T>, f: F) -> Result<Vec<R>, E>
where
    T: Send,
    R: Send,
    E: Send,
    F: Fn(T) -> Result<R, E> + Send + Sync,
{
    map(items, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let out = map((0..1000).collect(), |i: u64| i * i);
        assert_eq!(out, map_sequential((0..1000).collect(), |i: u64| i * i));
    }

    #[test]
    fn first_error_in_order() {
        let r: Result<Vec<i32>, i32> = try_map(vec![1, -2, 3, -4], |x| if x < 0 { Err(x) } else { Ok(x) });
        assert_eq!(r, Err(-2));
    }
}
