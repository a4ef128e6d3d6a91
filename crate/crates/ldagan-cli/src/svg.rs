//! Dependency-free SVG scatter plots: real data as gray dots, fakes colored
//! by the generator head that produced them.

use std::fmt::Write;

const PALETTE: [&str; 10] = [
    "#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4", "#f032e6", "#bfef45",
    "#9a6324", "#469990",
];

pub fn color_for(generator_id: usize) -> &'static str {
    PALETTE[generator_id % PALETTE.len()]
}

/// (x, y) point sets → standalone SVG document. `fakes` carry the id of the
/// head that generated them; the legend lists one swatch per head present.
pub fn scatter(reals: &[(f64, f64)], fakes: &[(f64, f64, usize)], title: &str) -> String {
    let size = 640.0;
    let margin = 40.0;

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(x, y) in reals {
        lo = lo.min(x).min(y);
        hi = hi.max(x).max(y);
    }
    for &(x, y, _) in fakes {
        lo = lo.min(x).min(y);
        hi = hi.max(x).max(y);
    }
    if !(lo.is_finite() && hi.is_finite()) {
        lo = -1.0;
        hi = 1.0;
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let span = hi - lo;
    let scale = (size - 2.0 * margin) / span;
    let px = |x: f64| margin + (x - lo) * scale;
    // y grows upward in data space, downward in SVG space
    let py = |y: f64| size - margin - (y - lo) * scale;

    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" \
         viewBox=\"0 0 {size} {size}\">\n"
    )
    .unwrap();
    write!(s, "<rect width=\"{size}\" height=\"{size}\" fill=\"white\"/>\n").unwrap();
    write!(
        s,
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{}</text>\n",
        size / 2.0,
        xml_escape(title)
    )
    .unwrap();

    for &(x, y) in reals {
        write!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.5\" fill=\"#bbbbbb\" fill-opacity=\"0.6\"/>\n",
            px(x),
            py(y)
        )
        .unwrap();
    }
    for &(x, y, id) in fakes {
        write!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{}\" fill-opacity=\"0.8\"/>\n",
            px(x),
            py(y),
            color_for(id)
        )
        .unwrap();
    }

    let mut ids: Vec<usize> = fakes.iter().map(|f| f.2).collect();
    ids.sort_unstable();
    ids.dedup();
    for (slot, id) in ids.iter().enumerate() {
        let y = margin + 16.0 * slot as f64;
        write!(
            s,
            "<rect x=\"{}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n\
             <text x=\"{}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">G{}</text>\n",
            size - margin + 6.0,
            y,
            color_for(*id),
            size - margin + 20.0,
            y + 9.0,
            id
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn produces_balanced_document() {
        let svg = scatter(&[(0.0, 0.0), (1.0, 1.0)], &[(0.5, 0.5, 0), (0.2, 0.8, 3)], "demo");
        assert!(svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<svg").count(), 1);
        assert_eq!(svg.matches("</svg>").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 4);
        // one legend entry per distinct generator
        assert_eq!(svg.matches("<rect").count(), 1 + 2);
    }

    #[test]
    fn degenerate_inputs_still_render() {
        let svg = scatter(&[], &[], "empty");
        assert!(svg.contains("</svg>"));
        let svg = scatter(&[(2.0, 2.0)], &[], "single point");
        assert!(svg.contains("circle"));
    }

    #[test]
    fn escapes_markup_in_titles() {
        let svg = scatter(&[], &[], "a < b & c");
        assert!(svg.contains("a &lt; b &amp; c"));
    }

    #[test]
    fn palette_cycles_past_ten_heads() {
        assert_eq!(color_for(0), color_for(10));
        assert_ne!(color_for(0), color_for(1));
    }
}
