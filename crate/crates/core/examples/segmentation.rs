//! Static and adaptive segmentations of a preference pair.

use adpo::composition::{segment_pair, xi_adaptive, xi_static, Family};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (len_w, len_l) = (7, 4);

    for k in [1, 3, 8] {
        let s = xi_static(len_w, len_l, k)?;
        println!("static k={k}: grid {} parts {:?}", s.padded_len, s.composition.parts());
    }
    for m in [1, 2, 3, 4] {
        let w = xi_adaptive(len_w, m)?;
        let l = xi_adaptive(len_l, m)?;
        println!("adaptive m={m}: chosen {:?} rejected {:?}", w.parts(), l.parts());
    }

    let pair = segment_pair(len_w, len_l, Family::Static { k: 3 }, true)?;
    for (i, (w, l)) in pair.chosen.iter().zip(&pair.rejected).enumerate() {
        let wi: Vec<usize> = w.active().collect();
        let li: Vec<usize> = l.active().collect();
        println!("segment {i}: chosen {wi:?} rejected {li:?}");
    }
    Ok(())
}
