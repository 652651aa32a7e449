//! Cut an MLP in two, run one training step across the cut by hand, and
//! check it matches the same step on the unsplit network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scala_sfl::data::synth_dataset;
use scala_sfl::losses::LossKind;
use scala_sfl::nn::{join_models, LayeredModel};

fn main() -> scala_sfl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let data = synth_dataset(3, 4, 10, 2.0, 0)?;
    let model = LayeredModel::mlp(&[4, 16, 8, 3], 2, &mut rng)?;
    let prior = scala_sfl::losses::LabelDistribution::uniform(3);
    let (x, y) = (data.features(), data.labels());
    let eta = 0.1;

    // client forward, server forward + backward, client backward
    let (mut client, mut server) = model.split()?;
    let (a, client_cache) = client.forward(x)?;
    let (logits, server_cache) = server.forward(&a)?;
    let loss = LossKind::Plain.evaluate(&logits, y, &prior)?;
    let (g_s, g_a) = server.backward(&server_cache, &loss.logit_grad)?;
    let (g_c, _) = client.backward(&client_cache, &g_a)?;
    server.sgd_step(&g_s, eta)?;
    client.sgd_step(&g_c, eta)?;
    println!("cut width {}, loss {:.5}", model.cut_width(), loss.value);
    println!("|g_c| = {:.5}, |g_s| = {:.5}", g_c.norm(), g_s.norm());

    let mut full = model.full().clone();
    let (logits, cache) = full.forward(x)?;
    let out = LossKind::Plain.evaluate(&logits, y, &prior)?;
    let (g, _) = full.backward(&cache, &out.logit_grad)?;
    full.sgd_step(&g, eta)?;

    let joined = join_models(&client, &server)?;
    let gap = joined
        .full()
        .params_flat()
        .iter()
        .zip(full.params_flat())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("max parameter gap split vs unsplit: {gap:e}");
    Ok(())
}
