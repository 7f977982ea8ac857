//! Per-task seeds derived from one master seed.
//!
//! Each trial owns independent streams for its matrix and its signal, so
//! results do not depend on the order in which tasks run.

/// SplitMix64 finalizer: a bijection on `u64` with full avalanche.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// What a derived seed drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Matrix = 1,
    Signal = 2,
}

/// Seed for `stream` of task `index`.
pub fn task_seed(master: u64, index: u64, stream: Stream) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ index) ^ stream as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn matches_reference_output() {
        // First outputs of the reference generator seeded with 0.
        let mut state = 0u64;
        let mut next = || {
            let out = splitmix64(state);
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            out
        };
        assert_eq!(next(), 0xe220_a839_7b1d_cdaf);
        assert_eq!(next(), 0x6e78_9e6a_a1b9_65f4);
    }

    #[test]
    fn seeds_are_distinct_across_tasks_and_streams() {
        let mut seen = HashSet::new();
        for master in [0, 1, 42] {
            for i in 0..500 {
                assert!(seen.insert(task_seed(master, i, Stream::Matrix)));
                assert!(seen.insert(task_seed(master, i, Stream::Signal)));
            }
        }
    }
}
