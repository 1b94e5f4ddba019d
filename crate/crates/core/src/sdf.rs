//! Signed distance functions for the 2-d tool cross-sections.
//!
//! Primitives are exact distances; combinators use min (union),
//! max (intersect) and max(a, -b) (subtract), which keeps sign correctness
//! everywhere and the sampled Lipschitz bound within the tested 1.2 factor.
//! All coordinates and sizes are millimetres.

use serde::{Deserialize, Serialize};

/// A composition tree of signed-distance primitives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SdfNode {
    Circle { r: f64 },
    /// Axis-aligned box with half-extents (hx, hy).
    Rect { hx: f64, hy: f64 },
    /// Ellipse with semi-axes (a, b); exact distance via bisection.
    Ellipse { a: f64, b: f64 },
    /// Equilateral triangle, `half_side` is half the edge length.
    Triangle { half_side: f64 },
    /// Regular hexagon, `apothem` is the center-to-edge distance.
    Hexagon { apothem: f64 },
    /// Segment from (ax, ay) to (bx, by) inflated by radius r.
    Capsule { ax: f64, ay: f64, bx: f64, by: f64, r: f64 },
    /// Five-pointed star with outer radius r and inner radius factor rf.
    Star5 { r: f64, rf: f64 },
    Translate { dx: f64, dy: f64, node: Box<SdfNode> },
    Union { a: Box<SdfNode>, b: Box<SdfNode> },
    Intersect { a: Box<SdfNode>, b: Box<SdfNode> },
    Subtract { a: Box<SdfNode>, b: Box<SdfNode> },
}

/// Signed distance from `(x, y)` to the shape: negative strictly inside,
/// positive strictly outside.
pub fn eval_sdf(node: &SdfNode, x: f64, y: f64) -> f64 {
    match node {
        SdfNode::Circle { r } => (x * x + y * y).sqrt() - r,
        SdfNode::Rect { hx, hy } => {
            let qx = x.abs() - hx;
            let qy = y.abs() - hy;
            let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
            outside + qx.max(qy).min(0.0)
        }
        SdfNode::Ellipse { a, b } => sd_ellipse(x, y, *a, *b),
        SdfNode::Triangle { half_side } => sd_equilateral_triangle(x, y, *half_side),
        SdfNode::Hexagon { apothem } => sd_hexagon(x, y, *apothem),
        SdfNode::Capsule { ax, ay, bx, by, r } => {
            let (px, py) = (x - ax, y - ay);
            let (ex, ey) = (bx - ax, by - ay);
            let t = ((px * ex + py * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
            let (dx, dy) = (px - t * ex, py - t * ey);
            (dx * dx + dy * dy).sqrt() - r
        }
        SdfNode::Star5 { r, rf } => sd_star5(x, y, *r, *rf),
        SdfNode::Translate { dx, dy, node } => eval_sdf(node, x - dx, y - dy),
        SdfNode::Union { a, b } => eval_sdf(a, x, y).min(eval_sdf(b, x, y)),
        SdfNode::Intersect { a, b } => eval_sdf(a, x, y).max(eval_sdf(b, x, y)),
        SdfNode::Subtract { a, b } => eval_sdf(a, x, y).max(-eval_sdf(b, x, y)),
    }
}

fn sd_equilateral_triangle(mut px: f64, mut py: f64, half_side: f64) -> f64 {
    let k = 3.0f64.sqrt();
    px = px.abs() - half_side;
    py += half_side / k;
    if px + k * py > 0.0 {
        let (nx, ny) = ((px - k * py) / 2.0, (-k * px - py) / 2.0);
        px = nx;
        py = ny;
    }
    px -= px.clamp(-2.0 * half_side, 0.0);
    -(px * px + py * py).sqrt() * py.signum()
}

fn sd_hexagon(px: f64, py: f64, apothem: f64) -> f64 {
    let (kx, ky, kz) = (-0.866_025_403_784_438_6, 0.5, 0.577_350_269_189_625_8);
    let mut x = px.abs();
    let mut y = py.abs();
    let d = 2.0 * (kx * x + ky * y).min(0.0);
    x -= d * kx;
    y -= d * ky;
    x -= x.clamp(-kz * apothem, kz * apothem);
    y -= apothem;
    (x * x + y * y).sqrt() * y.signum()
}

fn sd_star5(px: f64, py: f64, r: f64, rf: f64) -> f64 {
    let (k1x, k1y) = (0.809_016_994_375, -0.587_785_252_292);
    let (k2x, k2y) = (-k1x, k1y);
    let mut x = px.abs();
    let mut y = py;
    let d1 = 2.0 * (k1x * x + k1y * y).max(0.0);
    x -= d1 * k1x;
    y -= d1 * k1y;
    let d2 = 2.0 * (k2x * x + k2y * y).max(0.0);
    x -= d2 * k2x;
    y -= d2 * k2y;
    x = x.abs();
    y -= r;
    let (bax, bay) = (rf * (-k1y), rf * k1x - 1.0);
    let h = ((x * bax + y * bay) / (bax * bax + bay * bay)).clamp(0.0, r);
    let (dx, dy) = (x - bax * h, y - bay * h);
    (dx * dx + dy * dy).sqrt() * (y * bax - x * bay).signum()
}

/// Exact distance to an ellipse with semi-axes a >= b in the first quadrant,
/// via a bisection on the standard orthogonal-projection equation.
fn sd_ellipse(px: f64, py: f64, a: f64, b: f64) -> f64 {
    // reduce to first quadrant with e0 >= e1
    let (y0, y1, e0, e1) = if a >= b {
        (px.abs(), py.abs(), a, b)
    } else {
        (py.abs(), px.abs(), b, a)
    };
    let inside = (px / a).powi(2) + (py / b).powi(2) < 1.0;
    let dist = if y1 > 0.0 {
        if y0 > 0.0 {
            // F(t) = (e0 y0 / (t+e0^2))^2 + (e1 y1 / (t+e1^2))^2 - 1 = 0
            let mut lo = -e1 * e1 + e1 * y1;
            let mut hi = -e1 * e1 + (e0 * y0).hypot(e1 * y1);
            for _ in 0..120 {
                let t = 0.5 * (lo + hi);
                let f0 = e0 * y0 / (t + e0 * e0);
                let f1 = e1 * y1 / (t + e1 * e1);
                if f0 * f0 + f1 * f1 - 1.0 > 0.0 {
                    lo = t;
                } else {
                    hi = t;
                }
            }
            let t = 0.5 * (lo + hi);
            let x0 = e0 * e0 * y0 / (t + e0 * e0);
            let x1 = e1 * e1 * y1 / (t + e1 * e1);
            (x0 - y0).hypot(x1 - y1)
        } else {
            (y1 - e1).abs()
        }
    } else {
        let crit = (e0 * e0 - e1 * e1) / e0;
        if y0 < crit {
            let x0 = e0 * e0 * y0 / (e0 * e0 - e1 * e1);
            let x1 = e1 * (1.0 - (x0 / e0) * (x0 / e0)).max(0.0).sqrt();
            (x0 - y0).hypot(x1)
        } else {
            (y0 - e0).abs()
        }
    };
    if inside {
        -dist
    } else {
        dist
    }
}

/// One tool of the library: an id, a human-readable name, and its SDF tree.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToolShape {
    pub id: u32,
    pub name: String,
    pub sdf: SdfNode,
}

fn tool(id: u32, name: &str, sdf: SdfNode) -> ToolShape {
    ToolShape {
        id,
        name: name.to_string(),
        sdf,
    }
}

/// The 9 tools used for representation learning.
pub fn training_tools() -> Vec<ToolShape> {
    use SdfNode::*;
    vec![
        tool(0, "circle", Circle { r: 6.5 }),
        tool(1, "rect", Rect { hx: 5.5, hy: 5.5 }),
        tool(2, "ellipse", Ellipse { a: 4.5, b: 2.0 }),
        tool(3, "triangle", Triangle { half_side: 6.0 }),
        tool(4, "hexagon", Hexagon { apothem: 3.2 }),
        tool(
            5,
            "capsule",
            Capsule {
                ax: 0.0,
                ay: -5.5,
                bx: 0.0,
                by: 5.5,
                r: 1.8,
            },
        ),
        tool(
            6,
            "annulus",
            Subtract {
                a: Box::new(Circle { r: 7.0 }),
                b: Box::new(Circle { r: 4.0 }),
            },
        ),
        tool(
            7,
            "plus",
            Union {
                a: Box::new(Rect { hx: 6.0, hy: 1.8 }),
                b: Box::new(Rect { hx: 1.8, hy: 6.0 }),
            },
        ),
        tool(
            8,
            "stadium",
            Capsule {
                ax: -4.0,
                ay: 0.0,
                bx: 4.0,
                by: 0.0,
                r: 3.0,
            },
        ),
    ]
}

/// The 3 tools held out from representation learning entirely.
pub fn heldout_tools() -> Vec<ToolShape> {
    use SdfNode::*;
    vec![
        tool(
            9,
            "lshape",
            Union {
                a: Box::new(Translate {
                    dx: -2.8,
                    dy: 0.0,
                    node: Box::new(Rect { hx: 1.9, hy: 6.0 }),
                }),
                b: Box::new(Translate {
                    dx: 1.6,
                    dy: -4.1,
                    node: Box::new(Rect { hx: 3.1, hy: 1.9 }),
                }),
            },
        ),
        tool(
            10,
            "tshape",
            Union {
                a: Box::new(Translate {
                    dx: 0.0,
                    dy: 4.0,
                    node: Box::new(Rect { hx: 6.0, hy: 1.9 }),
                }),
                b: Box::new(Translate {
                    dx: 0.0,
                    dy: -1.0,
                    node: Box::new(Rect { hx: 1.9, hy: 4.4 }),
                }),
            },
        ),
        tool(11, "star", Star5 { r: 7.0, rf: 0.45 }),
    ]
}

/// All 12 tools, training first, ordered by id.
pub fn all_tools() -> Vec<ToolShape> {
    let mut tools = training_tools();
    tools.extend(heldout_tools());
    tools
}
