//! Build the prompt matrix for two demonstrations and print it as CSV.
use hmm_icl::context::{build_context, ContextLayout};

fn main() -> hmm_icl::Result<()> {
    let layout = ContextLayout::new(2, 3, 4, 2, 1)?;
    let m0 = build_context(&[vec![0, 1, 1], vec![1, 0, 0]], &[1, 1, 0], &layout)?;
    eprintln!(
        "{} rows x {} cols; tokens {:?}, positions {:?}, ones {}, test {}",
        layout.rows(),
        layout.d,
        layout.token_cols(),
        layout.position_cols(),
        layout.ones_col(),
        layout.test_col()
    );
    m0.write_csv(std::io::stdout())?;
    assert_eq!(m0.demos(), vec![vec![0, 1, 1], vec![1, 0, 0]]);
    Ok(())
}
