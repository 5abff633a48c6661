//! SVG rendering of a layer's weights matrix, raw and reordered by the
//! orderedness witness.

use crate::error::Result;
use crate::layer::{LayerParams, LayerShape};
use crate::numerics::Matrix;
use crate::orderedness::{apply_hidden_permutation, orderedness_with_scope, MassScope};
use crate::svg::{signed_color, Svg};

const GAP: f64 = 8.0;

fn cell_size(shape: &LayerShape) -> f64 {
    (360.0 / shape.fan_in() as f64).clamp(6.0, 28.0)
}

fn unit_label(shape: &LayerShape, k: usize, perm: Option<&[usize]>) -> String {
    let o = shape.outputs;
    let h = shape.hidden;
    if k < o {
        format!("out{k}")
    } else if k < o + h {
        let unit = perm.map_or(k - o, |p| p[k - o]);
        format!("hid{unit}")
    } else {
        format!("in{}", k - o - h)
    }
}

#[allow(clippy::too_many_arguments)]
fn panel(
    svg: &mut Svg,
    name: &str,
    title: &str,
    weights: &Matrix,
    shape: &LayerShape,
    perm: Option<&[usize]>,
    origin: (f64, f64),
    scale: f64,
) {
    let cell = cell_size(shape);
    let n = shape.state_size();
    let (x0, y0) = origin;
    let col_x = |c: usize| x0 + c as f64 * cell + if c >= n { GAP } else { 0.0 };
    svg.text(x0, y0 - 30.0, 13.0, "start", title);
    for c in 0..weights.cols() {
        let label = unit_label(shape, c, perm);
        svg.text(col_x(c) + cell / 2.0, y0 - 6.0, 8.0, "middle", &label);
    }
    for r in 0..weights.rows() {
        let y = y0 + r as f64 * cell;
        svg.text(x0 - 4.0, y + cell / 2.0 + 3.0, 8.0, "end", &unit_label(shape, r, perm));
        for c in 0..weights.cols() {
            let v = weights[(r, c)];
            let attrs = format!(
                r##"class="w" data-panel="{name}" data-r="{r}" data-c="{c}" stroke="#e0e0e0" stroke-width="0.5""##
            );
            svg.rect(col_x(c), y, cell, cell, &signed_color(v, scale), &attrs);
        }
    }
    let bottom = y0 + n as f64 * cell;
    let right = col_x(weights.cols() - 1) + cell;
    let split_y = y0 + shape.outputs as f64 * cell;
    svg.line(x0, split_y, right, split_y, "#555", 1.0);
    let split_x = x0 + shape.outputs as f64 * cell;
    svg.line(split_x, y0, split_x, bottom, "#555", 1.0);
    let input_x = x0 + n as f64 * cell + GAP / 2.0;
    svg.line(input_x, y0 - 2.0, input_x, bottom + 2.0, "#000", 2.0);
    svg.line(x0, y0, x0 + n as f64 * cell, y0 + n as f64 * cell, "#999", 0.5);
}

/// Renders the effective weights and, alongside, the same matrix with hidden
/// units reordered by the orderedness witness, annotated with O.
pub fn render_weights_svg(
    shape: &LayerShape,
    params: &LayerParams,
    scope: MassScope,
) -> Result<String> {
    params.check(shape)?;
    let w = params.effective_weights();
    let result = orderedness_with_scope(&w, shape, scope)?;
    let ordered = apply_hidden_permutation(&w, &result.permutation, shape.outputs, shape.hidden)?;
    let scale = w.max_abs();

    let cell = cell_size(shape);
    let panel_w = cell * shape.fan_in() as f64 + GAP;
    let panel_h = cell * shape.state_size() as f64;
    let left = 50.0;
    let top = 80.0;
    let width = 2.0 * (left + panel_w) + 40.0;
    let height = top + panel_h + 70.0;

    let mut svg = Svg::new(width, height);
    panel(&mut svg, "raw", "W (rows: destination)", &w, shape, None, (left, top), scale);
    let witness: Vec<String> = result.permutation.iter().map(|p| p.to_string()).collect();
    panel(
        &mut svg,
        "ordered",
        &format!("witness order [{}]", witness.join(" ")),
        &ordered,
        shape,
        Some(&result.permutation),
        (2.0 * left + panel_w + 20.0, top),
        scale,
    );
    svg.text(
        left,
        top + panel_h + 30.0,
        12.0,
        "start",
        &format!(
            "O = {:.4}   L = {:.4}   S = {:.4}   scope = {scope}   max |w| = {scale:.4}",
            result.orderedness, result.lower_mass, result.total_mass
        ),
    );
    Ok(svg.finish())
}
