//! Prints the architecture of both network variants: the per-node input
//! channel table, the widths, and the learnable parameter counts compared
//! against closed-form expressions.
//!
//! Run with: `cargo run --example count_params`

use stormcast::model::{Model, ModelConfig, Variant, NODES};

/// Learnable scalars in one residual block with M input and N output
/// channels: a 1x1 fusion conv (M*N + N), two bias-free 3x3 convs (9*N*N
/// each), and two batchnorm affine pairs (2*N each).
fn residual_params(m: usize, n: usize) -> usize {
    m * n + 18 * n * n + 5 * n
}

/// Learnable scalars in one plain block: a 3x3 conv M->N, a 3x3 conv N->N
/// (both bias-free), and two batchnorm affine pairs.
fn plain_params(m: usize, n: usize) -> usize {
    9 * m * n + 9 * n * n + 4 * n
}

fn main() -> stormcast::Result<()> {
    let base = 16;
    let in_channels = 10;

    for variant in [Variant::Runetpp, Variant::Unetpp] {
        let model = Model::new(ModelConfig {
            variant,
            base_width: base,
            in_channels,
            ..ModelConfig::default()
        })?;
        let table = model.in_channel_table();

        println!("{variant} (base width {base}, {in_channels} input channels)");
        println!("  {:<6} {:>5} {:>6} {:>10}", "node", "in", "width", "params");
        let mut oracle = 0usize;
        for (idx, &(i, j)) in NODES.iter().enumerate() {
            let (_, _, m) = table[idx];
            let n = base << i;
            let p = match variant {
                Variant::Runetpp => residual_params(m, n),
                Variant::Unetpp => plain_params(m, n),
            };
            oracle += p;
            println!("  R({i},{j}) {m:>5} {n:>6} {p:>10}");
        }
        // three 1x1 prediction heads, each base->1 with bias
        oracle += 3 * (base + 1);
        println!("  heads: 3 x ({base}+1) = {}", 3 * (base + 1));
        let counted = model.count_parameters();
        println!("  total: {counted} (closed form {oracle})");
        assert_eq!(counted, oracle, "parameter count disagrees with closed form");
        println!();
    }
    Ok(())
}
