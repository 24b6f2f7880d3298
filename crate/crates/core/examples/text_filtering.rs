//! Detects word regions in a mark with text and drops the keypoints inside them.
//!
//! cargo run --release --example text_filtering

use tmretrieval::keypoints::{SiftExtractor, SiftFlavor};
use tmretrieval::raster::to_gray;
use tmretrieval::synth::{render_word, FontStyle};
use tmretrieval::textmask::{detect_text_regions, filter_keypoints, write_text_boxes_csv};

fn main() -> tmretrieval::Result<()> {
    let (img, _, bounds) = render_word("LOGO", (160, 96), (20.0, 30.0), 5.0, FontStyle::Bold)?;
    let gray = to_gray(&img);
    let boxes = detect_text_regions(&gray);
    println!("rendered word bounds {bounds:?}");
    write_text_boxes_csv([("logo.png", boxes.as_slice())], std::io::stdout())?;
    let set = SiftExtractor::new(Default::default()).extract(&gray, SiftFlavor::Sift)?;
    let kept = filter_keypoints(&set, &boxes);
    println!("{} SIFT keypoints, {} outside text", set.len(), kept.len());
    Ok(())
}
