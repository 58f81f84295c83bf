//! A deliberately broken backward rule must be caught by the gradient
//! suites. Lives in its own test binary because the fault switch is
//! process-global.

use std::sync::atomic::Ordering;

use mixer_tts::numerics::GELU_BACKWARD_SIGN_FLIP;
use mixer_tts::suites::{self, SuiteGroup};

#[test]
fn flipped_gelu_gradient_is_detected() {
    let clean = suites::run(&SuiteGroup::ALL, 5, 3).unwrap();
    assert!(clean.iter().all(|r| r.passed()));

    GELU_BACKWARD_SIGN_FLIP.store(true, Ordering::SeqCst);
    let broken = suites::run(&SuiteGroup::ALL, 5, 3).unwrap();
    GELU_BACKWARD_SIGN_FLIP.store(false, Ordering::SeqCst);

    let failed: Vec<&str> = broken.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    assert!(failed.contains(&"gelu"), "{failed:?}");
    assert!(failed.contains(&"mixer_block"), "{failed:?}");
    assert!(failed.contains(&"model_basic"), "{failed:?}");
    // cases without a GELU are unaffected
    for name in ["linear", "log_softmax", "forward_sum_loss", "soft_alignment"] {
        assert!(!failed.contains(&name), "{name} flagged: {failed:?}");
    }
}
