//! The three label-skew partitioners and the manifest they produce.
//!
//! Usage: cargo run --example partitions [out.json]

use scala_sfl::data::{partition_dirichlet_skew, partition_iid, partition_quantity_skew, synth_dataset};

fn main() -> scala_sfl::Result<()> {
    let data = synth_dataset(10, 4, 100, 1.0, 0)?;
    let parts = [
        ("iid", partition_iid(&data, 8, 1)?),
        ("quantity alpha=2", partition_quantity_skew(&data, 8, 2, 1)?),
        ("dirichlet beta=0.1", partition_dirichlet_skew(&data, 8, 0.1, 1)?),
    ];
    for (name, part) in &parts {
        println!("== {name}");
        for k in 0..part.num_clients() {
            println!("client {k}: {:?}", part.client_label_counts(&data, k));
        }
    }
    if let Some(path) = std::env::args().nth(1) {
        let manifest = parts[1].1.manifest(&data);
        manifest.save(path.as_ref())?;
        print!("{}", manifest.summary());
    }
    Ok(())
}
