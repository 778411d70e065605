//! Generate seeded instances of all four problems and write a dataset file.
//!
//! ```bash
//! cargo run --release --example generate_instances
//! ```

use crossroute::io::{read_dataset, write_dataset, Dataset};
use crossroute::vrp::{generate_instances, Distribution, Problem};

fn main() -> crossroute::Result<()> {
    for problem in [Problem::Tsp, Problem::Op, Problem::Pctsp, Problem::Cvrp] {
        let batch = generate_instances(problem, 20, 2, Distribution::Uniform, 7)?;
        let inst = &batch[0];
        println!("{}: {} nodes", problem.name(), inst.n_nodes());
        match problem {
            Problem::Tsp => {}
            Problem::Op => println!(
                "  prizes all 1, length budget {:.1}",
                inst.max_length()
            ),
            Problem::Pctsp => println!(
                "  total prize {:.3} vs floor {:.1}, penalties up to {:.3}",
                inst.prizes().iter().sum::<f64>(),
                inst.min_prize(),
                inst.penalties().iter().cloned().fold(0.0, f64::max)
            ),
            Problem::Cvrp => println!(
                "  total demand {:.0} vs capacity {:.0}",
                inst.demands().iter().sum::<f64>(),
                inst.capacity()
            ),
        }
    }

    // Gaussian coordinates are rescaled into the unit square per instance.
    let gauss = generate_instances(Problem::Tsp, 50, 1, Distribution::Gaussian, 9)?;
    let inside = gauss[0]
        .coords
        .iter()
        .all(|c| (0.0..=1.0).contains(&c[0]) && (0.0..=1.0).contains(&c[1]));
    println!("gaussian instance rescaled into the unit square: {inside}");

    // Dataset files roundtrip bit-exactly.
    let dir = std::env::temp_dir();
    let path = dir.join("crossroute-example-op20.bin");
    let dataset = Dataset::generate(Problem::Op, 20, 128, Distribution::Uniform, 42)?;
    write_dataset(&dataset, &path)?;
    let back = read_dataset(&path)?;
    println!(
        "dataset: wrote and re-read {} instances, identical: {}",
        back.instances.len(),
        back == dataset
    );
    Ok(())
}
