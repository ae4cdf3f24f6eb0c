//! Visualize how the recurrent iterations grow a unit's receptive field: feed
//! a single-pixel impulse through one recurrent conv layer and print which
//! output sites respond, for T = 0, 1, 2.
//!
//!     cargo run --example receptive_field

use dsrcnn::rcl::{rcl_forward, RclParams};
use dsrcnn::{ConvParams, Shape, Tensor};

fn layer(iterations: usize) -> RclParams {
    RclParams::new(
        ConvParams::new(
            Tensor::filled(Shape::new(1, 1, 3, 3), 1.0),
            Some(Tensor::zeros(Shape::new(1, 1, 1, 1))),
            (1, 1),
            (1, 1),
        )
        .unwrap(),
        ConvParams::new(Tensor::filled(Shape::new(1, 1, 3, 3), 1.0), None, (1, 1), (1, 1)).unwrap(),
        iterations,
    )
    .unwrap()
}

fn main() {
    let size = 11;
    let mut impulse = Tensor::zeros(Shape::new(1, 1, size, size));
    impulse.set(0, 0, size / 2, size / 2, 1.0);

    for iterations in 0..=2 {
        let out = rcl_forward(&impulse, &layer(iterations)).unwrap();
        let mut footprint = 0;
        println!("T = {iterations}:");
        for y in 0..size {
            let row: String = (0..size)
                .map(|x| {
                    if out.get(0, 0, y, x) != 0.0 {
                        footprint += 1;
                        '#'
                    } else {
                        '.'
                    }
                })
                .collect();
            println!("  {row}");
        }
        let side = (footprint as f64).sqrt() as usize;
        println!("  footprint {side}x{side} (kernel 3, grows by 2 per iteration)\n");
    }
}
