//! Digit-block remapping of ranks from a larger vocabulary into a smaller one.
//!
//! The `B` least probable decoder ranks `L+1 ..= L+B` are reserved. Encoder
//! ranks up to `L` pass through; a deeper rank `r` is written as the pair
//! `(L + hi, L + lo)` where `hi, lo` are the base-`B` digits of
//! `r - (L + 1)`.
//!
//! A leading digit of zero would put a direct rank (`L`) in first position
//! and make the stream unparseable, so encoder ranks `L+1 ..= L+B` are
//! refused with [`Error::RemapAmbiguity`].

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RemapPlan {
    pub v_enc: u32,
    pub v_dec: u32,
    /// Highest rank passed through unchanged (`L`).
    pub direct_limit: u32,
    /// Number of reserved digit ranks (`B`); zero for the identity plan.
    pub block_size: u32,
}

impl RemapPlan {
    pub fn is_identity(&self) -> bool {
        self.block_size == 0
    }

    /// Decoder ranks that open a two-rank code.
    pub fn block(&self) -> std::ops::RangeInclusive<u32> {
        self.direct_limit + 1..=self.direct_limit + self.block_size
    }

    /// Encoder ranks that cannot be expressed (leading digit zero).
    pub fn ambiguous_band(&self) -> std::ops::RangeInclusive<u32> {
        self.block()
    }
}

fn ceil_sqrt(n: u64) -> u64 {
    let mut r = (n as f64).sqrt() as u64;
    while r * r > n {
        r -= 1;
    }
    while r * r < n {
        r += 1;
    }
    r
}

pub fn plan_remap(v_enc: u32, v_dec: u32) -> Result<RemapPlan> {
    if v_enc <= v_dec {
        return Ok(RemapPlan {
            v_enc,
            v_dec,
            direct_limit: v_enc,
            block_size: 0,
        });
    }
    let unbridgeable = Error::Unbridgeable {
        v_enc: v_enc as usize,
        v_dec: v_dec as usize,
    };
    if v_dec < 4 {
        return Err(unbridgeable);
    }
    let overflow = (v_enc - v_dec) as u64;
    let block = ceil_sqrt(overflow) + 1;
    if block + 2 > v_dec as u64 {
        return Err(unbridgeable);
    }
    let direct = v_dec as u64 - block - 1;
    // every offset must fit in two base-B digits
    let max_offset = v_enc as u64 - (direct + 1);
    if max_offset >= block * block {
        return Err(unbridgeable);
    }
    Ok(RemapPlan {
        v_enc,
        v_dec,
        direct_limit: direct as u32,
        block_size: block as u32,
    })
}

/// One encoder rank as one or two decoder ranks.
pub fn remap_rank(plan: &RemapPlan, rank: u32) -> Result<Vec<u32>> {
    if rank == 0 || rank > plan.v_enc {
        return Err(Error::RankOutOfRange {
            rank,
            vocab: plan.v_enc as usize,
        });
    }
    let l = plan.direct_limit;
    if plan.is_identity() || rank <= l {
        return Ok(vec![rank]);
    }
    let offset = rank - (l + 1);
    let (hi, lo) = (offset / plan.block_size, offset % plan.block_size);
    if hi == 0 {
        let band = plan.ambiguous_band();
        return Err(Error::RemapAmbiguity {
            rank,
            lo: *band.start(),
            hi: *band.end(),
        });
    }
    Ok(vec![l + hi, l + lo])
}

pub fn remap_stream(plan: &RemapPlan, ranks: &[u32]) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(ranks.len());
    for &r in ranks {
        out.extend(remap_rank(plan, r)?);
    }
    Ok(out)
}

/// Left-to-right parse of a remapped stream back into encoder ranks.
pub fn unremap_stream(plan: &RemapPlan, ranks: &[u32]) -> Result<Vec<u32>> {
    let l = plan.direct_limit;
    let b = plan.block_size;
    let mut out = Vec::with_capacity(ranks.len());
    let mut i = 0;
    while i < ranks.len() {
        let r = ranks[i];
        if r == 0 {
            return Err(Error::MalformedDigit {
                rank: r,
                position: i,
            });
        }
        if plan.is_identity() || r <= l {
            if r > plan.v_enc {
                return Err(Error::MalformedDigit {
                    rank: r,
                    position: i,
                });
            }
            out.push(r);
            i += 1;
            continue;
        }
        if r > l + b {
            return Err(Error::MalformedDigit {
                rank: r,
                position: i,
            });
        }
        let Some(&lo_rank) = ranks.get(i + 1) else {
            return Err(Error::TruncatedCode);
        };
        if lo_rank < l || lo_rank >= l + b {
            return Err(Error::MalformedDigit {
                rank: lo_rank,
                position: i + 1,
            });
        }
        let offset = (r - l) as u64 * b as u64 + (lo_rank - l) as u64;
        let rank = offset + l as u64 + 1;
        if rank > plan.v_enc as u64 {
            return Err(Error::MalformedDigit {
                rank: r,
                position: i,
            });
        }
        out.push(rank as u32);
        i += 2;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_constants() {
        let plan = plan_remap(100_000, 60_000).unwrap();
        assert_eq!(plan.direct_limit, 59_798);
        assert_eq!(plan.block_size, 201);
        assert_eq!(plan.block(), 59_799..=59_999);
        assert_eq!(remap_rank(&plan, 98_799).unwrap(), vec![59_992, 59_804]);
        assert_eq!(
            unremap_stream(&plan, &[59_992, 59_804]).unwrap(),
            vec![98_799]
        );
        assert_eq!(remap_rank(&plan, 1).unwrap(), vec![1]);
        assert_eq!(remap_rank(&plan, 59_798).unwrap(), vec![59_798]);
    }

    #[test]
    fn identity_plan() {
        let plan = plan_remap(5000, 5000).unwrap();
        assert!(plan.is_identity());
        assert_eq!(
            remap_stream(&plan, &[1, 4999, 5000]).unwrap(),
            vec![1, 4999, 5000]
        );
        assert_eq!(unremap_stream(&plan, &[1, 2, 3]).unwrap(), vec![1, 2, 3]);
        assert!(plan_remap(10, 20).unwrap().is_identity());
    }

    #[test]
    fn small_plan_formula() {
        // overflow 100 -> B = 10 + 1, L = 900 - 11 - 1
        let plan = plan_remap(1000, 900).unwrap();
        assert_eq!(plan.block_size, 11);
        assert_eq!(plan.direct_limit, 888);
        assert!(plan.direct_limit + plan.block_size <= plan.v_dec);
    }

    #[test]
    fn ambiguous_band_is_refused() {
        let plan = plan_remap(100_000, 60_000).unwrap();
        for r in [59_799, 59_900, 59_999] {
            assert!(matches!(
                remap_rank(&plan, r),
                Err(Error::RemapAmbiguity {
                    lo: 59_799,
                    hi: 59_999,
                    ..
                })
            ));
        }
        assert_eq!(remap_rank(&plan, 60_000).unwrap(), vec![59_799, 59_798]);
    }

    #[test]
    fn unbridgeable() {
        assert!(matches!(plan_remap(10, 3), Err(Error::Unbridgeable { .. })));
        assert!(matches!(
            plan_remap(1000, 4),
            Err(Error::Unbridgeable { .. })
        ));
        assert!(plan_remap(5, 4).is_ok());
    }

    #[test]
    fn parse_errors() {
        let plan = plan_remap(100_000, 60_000).unwrap();
        assert!(matches!(
            unremap_stream(&plan, &[1, 59_992]),
            Err(Error::TruncatedCode)
        ));
        assert!(matches!(
            unremap_stream(&plan, &[59_992, 59_999]),
            Err(Error::MalformedDigit { position: 1, .. })
        ));
        assert!(matches!(
            unremap_stream(&plan, &[60_000]),
            Err(Error::MalformedDigit { position: 0, .. })
        ));
        assert!(matches!(
            remap_rank(&plan, 100_001),
            Err(Error::RankOutOfRange { .. })
        ));
    }

    #[test]
    fn ceil_sqrt_exact() {
        for n in 0..2000u64 {
            let r = ceil_sqrt(n);
            assert!(r * r >= n && (r == 0 || (r - 1) * (r - 1) < n), "n={n}");
        }
    }
}
