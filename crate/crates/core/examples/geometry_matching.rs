//! Box overlap, the pair gate and human-object pairing.
//!
//!     cargo run --example geometry_matching

use uhoi::datamodel::{filter_detections_with, Detection, DetectionFilter, HumanLexicon};
use uhoi::geometry::{
    iou, pair_overlap, spatial_match, union_box, BoundingBox, DEFAULT_IOU_THRESHOLD,
};
use uhoi::pairing::build_pairs;

fn main() -> uhoi::Result<()> {
    let person = BoundingBox::new(50.0, 60.0, 200.0, 400.0)?;
    let bike = BoundingBox::new(150.0, 250.0, 400.0, 450.0)?;
    let guess_person = BoundingBox::new(60.0, 70.0, 210.0, 380.0)?;
    let guess_bike = BoundingBox::new(220.0, 260.0, 420.0, 450.0)?;

    println!("human IoU  {:.3}", iou(&guess_person, &person));
    println!("object IoU {:.3}", iou(&guess_bike, &bike));
    let (pred, gt) = ((guess_person, guess_bike), (person, bike));
    println!(
        "pair overlap {:.3}, passes the {DEFAULT_IOU_THRESHOLD} gate: {}",
        pair_overlap(&pred, &gt),
        spatial_match(&pred, &gt, DEFAULT_IOU_THRESHOLD)
    );
    println!(
        "union region {:?}",
        union_box(&person, &bike).box_.to_array()
    );

    let detections = vec![
        Detection::new(person, "person", 0.92)?,
        Detection::new(bike, "bicycle", 0.81)?,
        Detection::new(BoundingBox::new(400.0, 50.0, 470.0, 300.0)?, "woman", 0.35)?,
        Detection::new(BoundingBox::new(10.0, 10.0, 40.0, 40.0)?, "bird", 0.05)?,
        Detection::new(BoundingBox::new(0.0, 400.0, 60.0, 470.0)?, "dog", 0.12)?,
    ];
    let humans = HumanLexicon::default();
    let kept = filter_detections_with(&detections, &DetectionFilter::default(), &humans);
    println!("\n{} of {} detections kept:", kept.len(), detections.len());
    for d in &kept {
        println!("  {:<8} {:.2}", d.label, d.score);
    }
    for p in build_pairs("street", &kept, &humans, true) {
        println!(
            "  pair {:<10} {} -> {}",
            p.pair_id, p.human.label, p.object.label
        );
    }
    Ok(())
}
