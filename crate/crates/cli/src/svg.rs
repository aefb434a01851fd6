//! Confusion-matrix heat map as a standalone SVG document.

use std::fmt::Write;

use kinegest::evaluation::ConfusionMatrix;
use kinegest::gesture::GestureClass;

const CELL: usize = 72;
const MARGIN: usize = 80;

/// Rows are true classes, columns predictions; shading is the row share.
pub fn confusion(m: &ConfusionMatrix, title: &str) -> String {
    let n = GestureClass::ALL.len();
    let side = MARGIN + n * CELL + 16;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{side}" height="{h}" font-family="sans-serif" font-size="13">"#,
        h = side + 24
    );
    let _ = writeln!(s, r#"<text x="8" y="18">{}</text>"#, escape(title));
    let top = MARGIN + 8;
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">predicted</text>"#, MARGIN + n * CELL / 2, top - 42);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">true</text>"#,
        y = top + n * CELL / 2
    );
    for (i, g) in GestureClass::ALL.iter().enumerate() {
        let c = MARGIN + i * CELL + CELL / 2;
        let _ = writeln!(s, r#"<text x="{c}" y="{}" text-anchor="middle">{g}</text>"#, top - 12);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{g}</text>"#, MARGIN - 10, top + i * CELL + CELL / 2 + 5);
    }
    for (i, row) in m.0.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for (j, &v) in row.iter().enumerate() {
            let share = if total == 0 { 0.0 } else { v as f64 / total as f64 };
            let shade = 255 - (share * 200.0).round() as u8;
            let x = MARGIN + j * CELL;
            let y = top + i * CELL;
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({shade},{shade},255)" stroke="grey"/>"#
            );
            let ink = if share > 0.6 { "white" } else { "black" };
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{v}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 5
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
