//! Train the sufficiency net on synthetic feature vectors and probe a few
//! points of the feature square.
//!
//!     cargo run --release --example feedback_training

use anyhow::Result;
use evidence_rag::feedback::train::accuracy;
use evidence_rag::feedback::{corner_dataset, train_on_features, FeatureVector, FeedbackNet, Hyper};

fn main() -> Result<()> {
    let data = corner_dataset(2400, 0.05, 7);
    let (train, val) = data.split_at(2000);
    let (net, report) = train_on_features(FeedbackNet::seeded((16, 8), 7), train, val, &Hyper::default())?;
    for (epoch, loss) in report.epoch_losses.iter().enumerate().step_by(40) {
        println!("epoch {epoch:>3}  loss {loss:.4}");
    }
    println!("final loss {:.4}", report.final_loss);
    println!("train accuracy {:.3}, val accuracy {:.3}", report.train_accuracy, accuracy(&net, val));

    println!("\n s_f   g_f      p  sufficient");
    for (s_f, g_f) in [(0.0, 0.0), (1.0, 0.2), (0.2, 1.0), (0.9, 0.9), (0.6, 0.7)] {
        let d = net.forward(FeatureVector { s_f, g_f })?;
        println!("{s_f:.2}  {g_f:.2}  {:.3}  {}", d.probability, d.sufficient);
    }
    Ok(())
}
