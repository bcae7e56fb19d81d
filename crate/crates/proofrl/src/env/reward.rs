//! Reward functions for the four agents. Every emitted reward lies in
//! {-2, -1, 0, +1, +2} or in (1, 2] via `1 + r_diff` on improving steps
//! (`r_diff <= 1` because CREMI is nonnegative).

/// Relative CREMI improvement `(before - after) / before`; defined as 0 when
/// the score was already 0 (nothing left to improve).
pub fn r_diff(cremi_before: f64, cremi_after: f64) -> f64 {
    if cremi_before == 0.0 {
        0.0
    } else {
        (cremi_before - cremi_after) / cremi_before
    }
}

/// Locator reward, a four-case table:
/// +2 for a correct stop, `1 + r_diff` for an improving action on an
/// erroneous patch, -1 for a non-improving action on an erroneous patch, and
/// -2 for a wrong stop or for acting on a patch outside the error set.
pub fn locator_reward(
    stop: bool,
    stop_correct: bool,
    in_error_set: bool,
    cremi_before: f64,
    cremi_after: f64,
) -> f64 {
    if stop {
        if stop_correct {
            2.0
        } else {
            -2.0
        }
    } else if !in_error_set {
        -2.0
    } else if cremi_after < cremi_before {
        1.0 + r_diff(cremi_before, cremi_after)
    } else {
        -1.0
    }
}

/// Selector reward: stop rewards are scaled down to +-1 and there is no
/// grid/error-set term, so the agent focuses on picking the right corrector.
pub fn selector_reward(stop: bool, stop_correct: bool, cremi_before: f64, cremi_after: f64) -> f64 {
    if stop {
        if stop_correct {
            1.0
        } else {
            -1.0
        }
    } else if cremi_after < cremi_before {
        1.0 + r_diff(cremi_before, cremi_after)
    } else {
        -1.0
    }
}

/// Splitter/merger reward: `1 + r_diff` for improving an erroneous patch,
/// +-1 for stops, -1 otherwise (including merges that raise the score).
pub fn corrector_reward(
    stop: bool,
    stop_correct: bool,
    in_error_set: bool,
    cremi_before: f64,
    cremi_after: f64,
) -> f64 {
    if stop {
        if stop_correct {
            1.0
        } else {
            -1.0
        }
    } else if in_error_set && cremi_after < cremi_before {
        1.0 + r_diff(cremi_before, cremi_after)
    } else {
        -1.0
    }
}
