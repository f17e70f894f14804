//! Reverse-mode gradients through a small conv + softmax graph.

use deftan::autodiff::Tape;
use deftan::kernels::Conv1dSpec;
use deftan::Tensor;

fn main() -> deftan::Result<()> {
    let tape = Tape::<f64>::new();
    let x = tape.var(Tensor::from_fn(&[1, 2, 6], |i| (i as f64 * 0.3).sin()));
    let w = tape.var(Tensor::from_fn(&[3, 2, 3], |i| 0.1 * i as f64 - 0.8));
    let y = x.conv1d(&w, None, Conv1dSpec::same(3, 1))?.softmax(2)?;
    let loss = y.mul(&y)?.sum();

    let grads = tape.backward(&loss)?;
    println!("loss {:.6}", loss.value().item());
    println!("dloss/dw {:?}", grads.get_or_zeros(&w).shape());
    for (i, g) in grads.get_or_zeros(&w).data().iter().enumerate().take(6) {
        println!("  w[{i}] {g:+.6e}");
    }
    Ok(())
}
