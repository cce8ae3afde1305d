//! SVG drawings of placements.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::net_bboxes;
use crate::netlist::{pin_absolute_position, ModuleKind, Netlist, Placement};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    /// Image width in pixels; the height follows the canvas aspect ratio.
    pub width_px: u32,
    /// Draw each net as lines from its first pin to the others.
    pub flylines: bool,
    /// Draw each net's bounding box.
    pub net_boxes: bool,
    pub title: Option<String>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            width_px: 600,
            flylines: false,
            net_boxes: false,
            title: None,
        }
    }
}

fn fill(kind: ModuleKind) -> &'static str {
    match kind {
        ModuleKind::Macro => "#4e79a7",
        ModuleKind::StandardCell => "#59a14f",
        ModuleKind::IoPad => "#e15759",
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders `placement` as a standalone SVG document.
///
/// Drawing coordinates are the normalized canvas with `y` pointing up, so
/// the view box spans `[-1, 1]` on both axes and a flip transform maps it
/// to screen space. Numbers are printed with fixed precision, which keeps
/// the output byte-stable.
pub fn render_svg(netlist: &Netlist, placement: &Placement, options: &RenderOptions) -> Result<String> {
    placement.check_matches(netlist)?;
    let aspect = if netlist.canvas.width > 0.0 {
        netlist.canvas.height / netlist.canvas.width
    } else {
        1.0
    };
    let w = options.width_px.max(1);
    let h = ((w as f64 * aspect).round() as u32).max(1);
    let coords = placement.coords();
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="-1.05 -1.05 2.1 2.1" preserveAspectRatio="none">"#
    );
    if let Some(title) = &options.title {
        let _ = writeln!(out, "<title>{}</title>", escape(title));
    }
    let _ = writeln!(out, r#"<g transform="scale(1,-1)" stroke-width="0.004">"#);
    let _ = writeln!(
        out,
        r##"<rect class="canvas" x="-1" y="-1" width="2" height="2" fill="#f7f7f7" stroke="#333333"/>"##
    );
    for m in &netlist.modules {
        let [x, y] = coords[m.id];
        let _ = writeln!(
            out,
            r##"<rect class="module" x="{:.6}" y="{:.6}" width="{:.6}" height="{:.6}" fill="{}" fill-opacity="0.7" stroke="#222222"><title>{}</title></rect>"##,
            x - m.width / 2.0,
            y - m.height / 2.0,
            m.width,
            m.height,
            fill(m.kind),
            escape(&m.name)
        );
    }
    if options.net_boxes {
        for b in net_bboxes(netlist, coords) {
            let _ = writeln!(
                out,
                r##"<rect class="net-box" x="{:.6}" y="{:.6}" width="{:.6}" height="{:.6}" fill="none" stroke="#f28e2b" stroke-opacity="0.5"/>"##,
                b[0],
                b[2],
                b[1] - b[0],
                b[3] - b[2]
            );
        }
    }
    if options.flylines {
        for net in &netlist.nets {
            let pins: Vec<[f64; 2]> = net
                .endpoints
                .iter()
                .map(|e| pin_absolute_position(netlist, coords, e.module, e.pin))
                .collect::<Result<_>>()?;
            let Some((first, rest)) = pins.split_first() else {
                continue;
            };
            for p in rest {
                let _ = writeln!(
                    out,
                    r##"<line class="flyline" x1="{:.6}" y1="{:.6}" x2="{:.6}" y2="{:.6}" stroke="#999999" stroke-opacity="0.6"/>"##,
                    first[0], first[1], p[0], p[1]
                );
            }
        }
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}
