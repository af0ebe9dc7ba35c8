use maisenet_core::{check_block, BlockKind};

fn run(kind: BlockKind) {
    for seed in 0..3 {
        let r = check_block(kind, seed).unwrap();
        assert!(
            r.pass,
            "{kind} seed {seed}: max rel err {:.3e} at {} (tol {:.0e})",
            r.max_relative_error,
            r.worst,
            kind.tolerance()
        );
        assert!(r.probes > 0);
    }
}

macro_rules! block_tests {
    ($($name:ident => $kind:expr,)*) => {
        $(#[test] fn $name() { run($kind); })*
    };
}

block_tests! {
    conv => BlockKind::Conv,
    conv_strided => BlockKind::ConvStrided,
    conv_dilated => BlockKind::ConvDilated,
    conv_grouped => BlockKind::ConvGrouped,
    shuffle => BlockKind::Shuffle,
    aspp => BlockKind::Aspp,
    nlb => BlockKind::Nlb,
    cbam => BlockKind::Cbam,
    csab => BlockKind::Csab,
    carafe => BlockKind::Carafe,
    fbo => BlockKind::Fbo,
    gcb => BlockKind::Gcb,
    reconstruct => BlockKind::Reconstruct,
    chain => BlockKind::Chain,
    se => BlockKind::Se,
}
