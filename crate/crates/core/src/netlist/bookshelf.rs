//! Reader and writer for a subset of the Bookshelf placement format.
//!
//! Supported sections:
//!
//! * `.nodes`: `name width height [terminal|terminal_NI|macro]`. `terminal`
//!   nodes become I/O pads; `macro` is an extension written by this crate.
//!   An optional `Canvas : W H` line (also an extension) gives the die
//!   size. Files with neither a `Canvas` line nor any `macro` flag count
//!   unflagged nodes as macros when taller than twice the shortest
//!   unflagged node; otherwise unflagged nodes are standard cells.
//! * `.nets`: `NetDegree : k [name]` blocks of `node DIR [: dx dy]` lines,
//!   with offsets measured from the node center. Net names starting with
//!   `clk_` are clock nets, `pwr_` power nets.
//! * `.pl`: `name x y [: orient] [/FIXED]` with lower-left corners.
//!
//! `.wts`, `.scl` and anything else is ignored with a warning. Lines
//! starting with `#` and the `UCLA` header are skipped.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result, Section};
use crate::netlist::{
    normalize_canvas, Canvas, Endpoint, Module, ModuleKind, Net, NetKind, Netlist, PinDirection, PinOffset,
    Placement, Units,
};

/// Raw text of one Bookshelf design.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BookshelfBundle {
    pub name: String,
    pub nodes: String,
    pub nets: String,
    pub pl: Option<String>,
    /// Overrides the `Canvas` line and any inference from `.pl`.
    pub canvas: Option<Canvas>,
    /// Names of sections that were present but are not interpreted.
    pub ignored: Vec<String>,
}

impl BookshelfBundle {
    /// Reads `<stem>.nodes`, `<stem>.nets` and, when present, `<stem>.pl`.
    /// `path` may be the stem itself, any of those files, or a directory
    /// holding exactly one `.nodes` file.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let stem = resolve_stem(path.as_ref())?;
        let name = stem
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let nodes = std::fs::read_to_string(stem.with_extension("nodes"))?;
        let nets = std::fs::read_to_string(stem.with_extension("nets"))?;
        let pl_path = stem.with_extension("pl");
        let pl = if pl_path.exists() {
            Some(std::fs::read_to_string(pl_path)?)
        } else {
            None
        };
        let ignored = ["wts", "scl"]
            .iter()
            .filter(|ext| stem.with_extension(ext).exists())
            .map(|ext| (*ext).to_owned())
            .collect();
        Ok(Self {
            name,
            nodes,
            nets,
            pl,
            canvas: None,
            ignored,
        })
    }

    /// Writes the bundle as `<dir>/<name>.{nodes,nets,pl}`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let stem = dir.as_ref().join(&self.name);
        std::fs::write(stem.with_extension("nodes"), &self.nodes)?;
        std::fs::write(stem.with_extension("nets"), &self.nets)?;
        if let Some(pl) = &self.pl {
            std::fs::write(stem.with_extension("pl"), pl)?;
        }
        Ok(stem)
    }
}

fn resolve_stem(path: &Path) -> Result<PathBuf> {
    if path.is_dir() {
        let mut found = Vec::new();
        for entry in std::fs::read_dir(path)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "nodes") {
                found.push(p);
            }
        }
        found.sort();
        return match found.as_slice() {
            [one] => Ok(one.with_extension("")),
            [] => Err(Error::InvalidArgument(format!(
                "no .nodes file in {}",
                path.display()
            ))),
            _ => Err(Error::InvalidArgument(format!(
                "several .nodes files in {}",
                path.display()
            ))),
        };
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("nodes" | "nets" | "pl" | "aux" | "wts" | "scl") => Ok(path.with_extension("")),
        _ => Ok(path.to_path_buf()),
    }
}

struct RawNode {
    name: String,
    width: f64,
    height: f64,
    flag: NodeFlag,
}

#[derive(Clone, Copy, PartialEq)]
enum NodeFlag {
    None,
    Terminal,
    Macro,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("UCLA") {
            None
        } else {
            Some((i + 1, line))
        }
    })
}

fn parse_err(section: Section, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        section,
        line,
        message: message.into(),
    }
}

fn parse_num(section: Section, line: usize, token: &str) -> Result<f64> {
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_err(
            section,
            line,
            format!("expected a number, found `{token}`"),
        )),
    }
}

fn header_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let rest = line.strip_prefix(key)?;
    let rest = rest.trim_start();
    Some(rest.strip_prefix(':').unwrap_or(rest).trim())
}

/// Parses a bundle into a normalized netlist and, when `.pl` text is
/// present, a placement on `[-1, 1]²`.
pub fn parse_bookshelf(bundle: &BookshelfBundle) -> Result<(Netlist, Option<Placement>)> {
    for section in &bundle.ignored {
        log::warn!("ignoring Bookshelf section .{section}");
    }
    let (raw_nodes, canvas_line) = parse_nodes(&bundle.nodes)?;
    let mut index = HashMap::with_capacity(raw_nodes.len());
    for (i, node) in raw_nodes.iter().enumerate() {
        if index.insert(node.name.clone(), i).is_some() {
            return Err(Error::DuplicateModule(node.name.clone()));
        }
    }
    let min_plain_height = raw_nodes
        .iter()
        .filter(|n| n.flag == NodeFlag::None)
        .map(|n| n.height)
        .fold(f64::INFINITY, f64::min);
    let flagged = canvas_line.is_some() || raw_nodes.iter().any(|n| n.flag == NodeFlag::Macro);
    let mut modules: Vec<Module> = raw_nodes
        .iter()
        .enumerate()
        .map(|(id, n)| {
            let kind = match n.flag {
                NodeFlag::Terminal => ModuleKind::IoPad,
                NodeFlag::Macro => ModuleKind::Macro,
                NodeFlag::None if !flagged && n.height > 2.0 * min_plain_height => ModuleKind::Macro,
                NodeFlag::None => ModuleKind::StandardCell,
            };
            Module {
                id,
                name: n.name.clone(),
                width: n.width,
                height: n.height,
                kind,
                pins: Vec::new(),
            }
        })
        .collect();
    for (node, module) in raw_nodes.iter().zip(&modules) {
        let bad = !(node.width >= 0.0 && node.height >= 0.0)
            || (module.kind != ModuleKind::IoPad && (node.width <= 0.0 || node.height <= 0.0));
        if bad {
            return Err(Error::NonPositiveDimension {
                name: node.name.clone(),
                width: node.width,
                height: node.height,
            });
        }
    }

    let nets = parse_nets(&bundle.nets, &index, &mut modules)?;

    let raw_pl = match &bundle.pl {
        Some(text) => Some(parse_pl(text, &index)?),
        None => None,
    };
    let canvas = match (bundle.canvas, canvas_line, &raw_pl) {
        (Some(c), _, _) | (None, Some(c), _) => c,
        (None, None, Some(pl)) => infer_canvas(&modules, pl),
        (None, None, None) => {
            return Err(Error::InvalidNetlist(
                "canvas size unknown: add a `Canvas : W H` line or a .pl section".into(),
            ))
        }
    };

    let physical = Netlist {
        name: bundle.name.clone(),
        canvas,
        units: Units::Physical,
        modules,
        nets,
    };
    let netlist = normalize_canvas(&physical)?;
    netlist.validate()?;

    let placement = match raw_pl {
        Some(positions) => {
            let sx = 2.0 / canvas.width;
            let sy = 2.0 / canvas.height;
            let mut coords = vec![[0.0, 0.0]; netlist.num_modules()];
            let mut seen = vec![false; netlist.num_modules()];
            for (id, (x, y), line) in positions {
                let m = &physical.modules[id];
                coords[id] = [(x + m.width / 2.0) * sx - 1.0, (y + m.height / 2.0) * sy - 1.0];
                if coords[id][0].abs() > 1.0 || coords[id][1].abs() > 1.0 {
                    return Err(parse_err(
                        Section::Pl,
                        line,
                        format!("`{}` is centered outside the canvas", m.name),
                    ));
                }
                seen[id] = true;
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(Error::InvalidPlacement(format!(
                    "no position for module `{}`",
                    netlist.modules[missing].name
                )));
            }
            Some(Placement::new(coords)?)
        }
        None => None,
    };
    Ok((netlist, placement))
}

fn parse_nodes(text: &str) -> Result<(Vec<RawNode>, Option<Canvas>)> {
    let sec = Section::Nodes;
    let mut nodes = Vec::new();
    let mut canvas = None;
    for (line_no, line) in content_lines(text) {
        if let Some(v) = header_value(line, "Canvas") {
            let parts: Vec<&str> = v.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(parse_err(sec, line_no, "expected `Canvas : W H`"));
            }
            canvas = Some(Canvas {
                width: parse_num(sec, line_no, parts[0])?,
                height: parse_num(sec, line_no, parts[1])?,
            });
            continue;
        }
        if header_value(line, "NumNodes").is_some() || header_value(line, "NumTerminals").is_some() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() < 3 || parts.len() > 4 {
            return Err(parse_err(
                sec,
                line_no,
                format!("expected `name width height [flag]`, found `{line}`"),
            ));
        }
        let flag = match parts.get(3) {
            None => NodeFlag::None,
            Some(&("terminal" | "terminal_NI")) => NodeFlag::Terminal,
            Some(&"macro") => NodeFlag::Macro,
            Some(other) => return Err(parse_err(sec, line_no, format!("unknown node flag `{other}`"))),
        };
        nodes.push(RawNode {
            name: parts[0].to_owned(),
            width: parse_num(sec, line_no, parts[1])?,
            height: parse_num(sec, line_no, parts[2])?,
            flag,
        });
    }
    Ok((nodes, canvas))
}

fn net_kind_from_name(name: &str) -> NetKind {
    if name.starts_with("clk_") {
        NetKind::Clock
    } else if name.starts_with("pwr_") {
        NetKind::Power
    } else {
        NetKind::Signal
    }
}

fn parse_nets(text: &str, index: &HashMap<String, usize>, modules: &mut [Module]) -> Result<Vec<Net>> {
    let sec = Section::Nets;
    let mut nets: Vec<Net> = Vec::new();
    let mut expected = 0usize;
    let mut header_line = 0usize;
    let mut seen: BTreeSet<(usize, u64, u64)> = BTreeSet::new();
    let close = |nets: &[Net], expected: usize, header_line: usize| -> Result<()> {
        if let Some(last) = nets.last() {
            if last.endpoints.len() != expected {
                return Err(parse_err(
                    sec,
                    header_line,
                    format!(
                        "net `{}` declares {expected} pins but lists {}",
                        last.name,
                        last.endpoints.len()
                    ),
                ));
            }
        }
        Ok(())
    };
    for (line_no, line) in content_lines(text) {
        if header_value(line, "NumNets").is_some() || header_value(line, "NumPins").is_some() {
            continue;
        }
        if let Some(v) = header_value(line, "NetDegree") {
            close(&nets, expected, header_line)?;
            let mut parts = v.split_whitespace();
            let degree = parts
                .next()
                .ok_or_else(|| parse_err(sec, line_no, "NetDegree without a count"))?;
            expected = degree
                .parse()
                .map_err(|_| parse_err(sec, line_no, format!("bad net degree `{degree}`")))?;
            if expected == 0 {
                return Err(parse_err(sec, line_no, "net with zero pins"));
            }
            let id = nets.len();
            let name = parts.next().map_or_else(|| format!("n{id}"), str::to_owned);
            header_line = line_no;
            seen.clear();
            nets.push(Net {
                id,
                kind: net_kind_from_name(&name),
                name,
                endpoints: Vec::with_capacity(expected),
                annotations: None,
            });
            continue;
        }
        let Some(net) = nets.last_mut() else {
            return Err(parse_err(sec, line_no, "pin line before any NetDegree"));
        };
        let (head, offsets) = match line.split_once(':') {
            Some((h, o)) => (h, Some(o)),
            None => (line, None),
        };
        let mut head_parts = head.split_whitespace();
        let node = head_parts
            .next()
            .ok_or_else(|| parse_err(sec, line_no, "missing node name"))?;
        let direction = match head_parts.next() {
            Some("I") => PinDirection::Input,
            Some("O") => PinDirection::Output,
            Some("B") | None => PinDirection::Bidirectional,
            Some(other) => {
                return Err(parse_err(
                    sec,
                    line_no,
                    format!("unknown pin direction `{other}`"),
                ))
            }
        };
        let (dx, dy) = match offsets {
            Some(o) => {
                let parts: Vec<&str> = o.split_whitespace().collect();
                if parts.len() != 2 {
                    return Err(parse_err(sec, line_no, "expected `: dx dy`"));
                }
                (
                    parse_num(sec, line_no, parts[0])?,
                    parse_num(sec, line_no, parts[1])?,
                )
            }
            None => (0.0, 0.0),
        };
        let &module = index.get(node).ok_or_else(|| Error::DanglingEndpoint {
            net: net.name.clone(),
            module: node.to_owned(),
        })?;
        if !seen.insert((module, dx.to_bits(), dy.to_bits())) {
            return Err(parse_err(
                sec,
                line_no,
                format!("duplicate endpoint `{node}` in net `{}`", net.name),
            ));
        }
        let pins = &mut modules[module].pins;
        pins.push(PinOffset { dx, dy, direction });
        net.endpoints.push(Endpoint {
            module,
            pin: pins.len() - 1,
        });
    }
    close(&nets, expected, header_line)?;
    Ok(nets)
}

type RawPosition = (usize, (f64, f64), usize);

fn parse_pl(text: &str, index: &HashMap<String, usize>) -> Result<Vec<RawPosition>> {
    let sec = Section::Pl;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (line_no, line) in content_lines(text) {
        let head = line.split(':').next().unwrap_or(line);
        let parts: Vec<&str> = head.split_whitespace().collect();
        if parts.len() < 3 {
            return Err(parse_err(
                sec,
                line_no,
                format!("expected `name x y`, found `{line}`"),
            ));
        }
        let &id = index
            .get(parts[0])
            .ok_or_else(|| parse_err(sec, line_no, format!("position for unknown node `{}`", parts[0])))?;
        if !seen.insert(id) {
            return Err(parse_err(sec, line_no, format!("`{}` placed twice", parts[0])));
        }
        let x = parse_num(sec, line_no, parts[1])?;
        let y = parse_num(sec, line_no, parts[2])?;
        out.push((id, (x, y), line_no));
    }
    Ok(out)
}

fn infer_canvas(modules: &[Module], positions: &[RawPosition]) -> Canvas {
    let (mut w, mut h) = (0.0f64, 0.0f64);
    for &(id, (x, y), _) in positions {
        w = w.max(x + modules[id].width);
        h = h.max(y + modules[id].height);
    }
    Canvas { width: w, height: h }
}

/// Finds a value near `guess` whose image under `f` is bitwise `target`, so
/// that written values parse back to exactly the normalized numbers.
fn preimage(target: f64, guess: f64, f: impl Fn(f64) -> f64) -> f64 {
    if f(guess) == target {
        return guess;
    }
    let (mut up, mut down) = (guess, guess);
    for _ in 0..256 {
        up = up.next_up();
        down = down.next_down();
        if f(up) == target {
            return up;
        }
        if f(down) == target {
            return down;
        }
    }
    guess
}

/// Writes a normalized netlist (and optional placement) back to Bookshelf
/// text in physical units. The output is canonical: parsing it and
/// serializing again reproduces it byte for byte.
pub fn serialize_bookshelf(
    netlist: &Netlist,
    placement: Option<&Placement>,
    header_comment: Option<&str>,
) -> Result<BookshelfBundle> {
    let netlist = normalize_canvas(netlist)?;
    if let Some(p) = placement {
        p.check_matches(&netlist)?;
    }
    let Canvas {
        width: cw,
        height: ch,
    } = netlist.canvas;
    let sx = 2.0 / cw;
    let sy = 2.0 / ch;
    let phys_w = |v: f64| preimage(v, v * cw / 2.0, |p| p * sx);
    let phys_h = |v: f64| preimage(v, v * ch / 2.0, |p| p * sy);
    let comment = header_comment.map(|c| format!("# {c}\n")).unwrap_or_default();

    let mut nodes = String::new();
    let terminals = netlist
        .modules
        .iter()
        .filter(|m| m.kind == ModuleKind::IoPad)
        .count();
    let widths: Vec<(f64, f64)> = netlist
        .modules
        .iter()
        .map(|m| (phys_w(m.width), phys_h(m.height)))
        .collect();
    let _ = writeln!(nodes, "UCLA nodes 1.0");
    nodes.push_str(&comment);
    let _ = writeln!(nodes, "Canvas : {} {}", cw, ch);
    let _ = writeln!(nodes, "NumNodes : {}", netlist.num_modules());
    let _ = writeln!(nodes, "NumTerminals : {terminals}");
    for (m, (w, h)) in netlist.modules.iter().zip(&widths) {
        let flag = match m.kind {
            ModuleKind::IoPad => " terminal",
            ModuleKind::Macro => " macro",
            ModuleKind::StandardCell => "",
        };
        let _ = writeln!(nodes, "  {} {} {}{}", m.name, w, h, flag);
    }

    let mut nets = String::new();
    let pins: usize = netlist.nets.iter().map(|n| n.endpoints.len()).sum();
    let _ = writeln!(nets, "UCLA nets 1.0");
    nets.push_str(&comment);
    let _ = writeln!(nets, "NumNets : {}", netlist.num_nets());
    let _ = writeln!(nets, "NumPins : {pins}");
    for net in &netlist.nets {
        let _ = writeln!(nets, "NetDegree : {} {}", net.endpoints.len(), net.name);
        for ep in &net.endpoints {
            let m = &netlist.modules[ep.module];
            let pin = m.pins[ep.pin];
            let dir = match pin.direction {
                PinDirection::Input => "I",
                PinDirection::Output => "O",
                PinDirection::Bidirectional => "B",
            };
            let _ = writeln!(
                nets,
                "  {} {} : {} {}",
                m.name,
                dir,
                phys_w(pin.dx),
                phys_h(pin.dy)
            );
        }
    }

    let pl = placement.map(|p| {
        let mut pl = String::new();
        let _ = writeln!(pl, "UCLA pl 1.0");
        pl.push_str(&comment);
        for ((m, c), (w, h)) in netlist.modules.iter().zip(p.coords()).zip(&widths) {
            let (w, h) = (*w, *h);
            let x = preimage(c[0], (c[0] + 1.0) * cw / 2.0 - w / 2.0, |x| {
                (x + w / 2.0) * sx - 1.0
            });
            let y = preimage(c[1], (c[1] + 1.0) * ch / 2.0 - h / 2.0, |y| {
                (y + h / 2.0) * sy - 1.0
            });
            let _ = writeln!(pl, "  {} {} {} : N", m.name, x, y);
        }
        pl
    });

    Ok(BookshelfBundle {
        name: netlist.name.clone(),
        nodes,
        nets,
        pl,
        canvas: None,
        ignored: Vec::new(),
    })
}

/// Writes just a `.pl` body for `placement` over `netlist`.
pub fn serialize_pl(
    netlist: &Netlist,
    placement: &Placement,
    header_comment: Option<&str>,
) -> Result<String> {
    Ok(serialize_bookshelf(netlist, Some(placement), header_comment)?
        .pl
        .unwrap_or_default())
}

/// Parses a stand-alone `.pl` text against an existing netlist.
pub fn parse_placement(netlist: &Netlist, pl: &str) -> Result<Placement> {
    let bundle = serialize_bookshelf(netlist, None, None)?;
    let bundle = BookshelfBundle {
        pl: Some(pl.to_owned()),
        ..bundle
    };
    let (_, placement) = parse_bookshelf(&bundle)?;
    placement.ok_or_else(|| Error::InvalidPlacement("empty placement".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(nets: &str) -> BookshelfBundle {
        BookshelfBundle {
            name: "toy".into(),
            nodes: "UCLA nodes 1.0\nCanvas : 100 100\nNumNodes : 2\n a 10 10\n b 10 10\n".into(),
            nets: nets.into(),
            pl: Some("UCLA pl 1.0\na 0 0 : N\nb 45 45 : N /FIXED\n".into()),
            canvas: None,
            ignored: vec![],
        }
    }

    #[test]
    fn minimal_bundle() {
        let b = minimal("NetDegree : 2 n0\n a B : 0 0\n b B : 0 0\n");
        let (n, p) = parse_bookshelf(&b).unwrap();
        assert_eq!(n.num_modules(), 2);
        assert_eq!(n.num_nets(), 1);
        assert_eq!(n.modules[0].width, 0.2);
        assert_eq!(n.modules[0].kind, ModuleKind::StandardCell);
        let p = p.unwrap();
        assert!((p.coords()[0][0] - (-0.9)).abs() < 1e-12);
        assert!((p.coords()[1][1] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn dangling_endpoint() {
        let b = minimal("NetDegree : 2 n0\n a B : 0 0\n c B : 0 0\n");
        assert!(matches!(
            parse_bookshelf(&b),
            Err(Error::DanglingEndpoint { module, .. }) if module == "c"
        ));
    }

    #[test]
    fn typed_errors() {
        let mut b = minimal("NetDegree : 2\n a B\n b B\n");
        b.nodes = "a 10 10\na 5 5\n".into();
        b.canvas = Some(Canvas {
            width: 100.0,
            height: 100.0,
        });
        assert!(matches!(parse_bookshelf(&b), Err(Error::DuplicateModule(_))));
        b.nodes = "a 0 10\nb 5 5\n".into();
        assert!(matches!(
            parse_bookshelf(&b),
            Err(Error::NonPositiveDimension { .. })
        ));
        b.nodes = "a 10 ten\n".into();
        assert!(matches!(parse_bookshelf(&b), Err(Error::Parse { line: 1, .. })));

        let dup = minimal("NetDegree : 2 n0\n a B : 0 0\n a B : 0 0\n");
        assert!(matches!(parse_bookshelf(&dup), Err(Error::Parse { line: 3, .. })));
        let short = minimal("NetDegree : 3 n0\n a B : 0 0\n b B : 0 0\n");
        assert!(matches!(parse_bookshelf(&short), Err(Error::Parse { .. })));
    }

    #[test]
    fn terminals_are_pads_and_macros_are_detected() {
        let b = BookshelfBundle {
            name: "k".into(),
            nodes: "p 0 0 terminal\nc 2 1\nbig 20 20\nm 2 1 macro\n".into(),
            nets: "NetDegree : 2\n p O\n c I\n".into(),
            pl: None,
            canvas: Some(Canvas {
                width: 100.0,
                height: 100.0,
            }),
            ignored: vec!["scl".into()],
        };
        let (n, p) = parse_bookshelf(&b).unwrap();
        assert!(p.is_none());
        let kinds: Vec<_> = n.modules.iter().map(|m| m.kind).collect();
        assert_eq!(
            kinds,
            [
                ModuleKind::IoPad,
                ModuleKind::StandardCell,
                ModuleKind::StandardCell,
                ModuleKind::Macro
            ]
        );
        let unflagged = BookshelfBundle {
            nodes: "p 0 0 terminal\nc 2 1\nbig 20 20\n".into(),
            ..b
        };
        let kinds: Vec<_> = parse_bookshelf(&unflagged)
            .unwrap()
            .0
            .modules
            .iter()
            .map(|m| m.kind)
            .collect();
        assert_eq!(
            kinds,
            [ModuleKind::IoPad, ModuleKind::StandardCell, ModuleKind::Macro]
        );
        assert_eq!(n.modules[0].pins[0].direction, PinDirection::Output);
    }

    #[test]
    fn serialize_is_canonical() {
        let b = minimal("NetDegree : 2 n0\n a O : 1.5 -2\n b I : 0 0\n");
        let (n, p) = parse_bookshelf(&b).unwrap();
        let first = serialize_bookshelf(&n, p.as_ref(), None).unwrap();
        let (n2, p2) = parse_bookshelf(&first).unwrap();
        assert_eq!(n, n2);
        assert_eq!(p, p2);
        let second = serialize_bookshelf(&n2, p2.as_ref(), None).unwrap();
        assert_eq!(first, second);
    }
}
