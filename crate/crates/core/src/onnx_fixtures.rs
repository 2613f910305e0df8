//! Tiny ONNX graphs for exercising the adapters without real weights.
//!
//! The graphs are built directly from the ONNX protobuf schema. Each output
//! depends on every input (through a zero-weighted sum) so the runtime keeps
//! all inputs in the plan.

use std::path::Path;

use prost::Message;
use tract_onnx::pb::{
    attribute_proto::AttributeType, tensor_proto::DataType, tensor_shape_proto, type_proto, AttributeProto, GraphProto,
    ModelProto, NodeProto, OperatorSetIdProto, TensorProto, TensorShapeProto, TypeProto, ValueInfoProto,
};

use crate::interchange::{sha256_file, GraphRef, InterchangeError};

fn value_info(name: &str, shape: &[i64]) -> ValueInfoProto {
    ValueInfoProto {
        name: name.into(),
        r#type: Some(TypeProto {
            value: Some(type_proto::Value::TensorType(type_proto::Tensor {
                elem_type: DataType::Float as i32,
                shape: Some(TensorShapeProto {
                    dim: shape
                        .iter()
                        .map(|&d| tensor_shape_proto::Dimension {
                            value: Some(tensor_shape_proto::dimension::Value::DimValue(d)),
                            ..Default::default()
                        })
                        .collect(),
                }),
            })),
            ..Default::default()
        }),
        ..Default::default()
    }
}

fn constant(name: &str, dims: &[i64], data: Vec<f32>) -> TensorProto {
    TensorProto {
        name: name.into(),
        dims: dims.to_vec(),
        data_type: DataType::Float as i32,
        float_data: data,
        ..Default::default()
    }
}

fn int64s(name: &str, data: &[i64]) -> TensorProto {
    TensorProto {
        name: name.into(),
        dims: vec![data.len() as i64],
        data_type: DataType::Int64 as i32,
        int64_data: data.to_vec(),
        ..Default::default()
    }
}

fn node(op: &str, inputs: &[&str], output: &str, attribute: Vec<AttributeProto>) -> NodeProto {
    NodeProto {
        op_type: op.into(),
        input: inputs.iter().map(|s| s.to_string()).collect(),
        output: vec![output.into()],
        name: output.into(),
        attribute,
        ..Default::default()
    }
}

fn ints(name: &str, v: &[i64]) -> AttributeProto {
    AttributeProto {
        name: name.into(),
        r#type: AttributeType::Ints as i32,
        ints: v.to_vec(),
        ..Default::default()
    }
}

fn int(name: &str, v: i64) -> AttributeProto {
    AttributeProto {
        name: name.into(),
        r#type: AttributeType::Int as i32,
        i: v,
        ..Default::default()
    }
}

fn model(graph: GraphProto) -> Vec<u8> {
    ModelProto {
        ir_version: 7,
        producer_name: "ichseg-fixtures".into(),
        opset_import: vec![OperatorSetIdProto {
            domain: String::new(),
            version: 11,
        }],
        graph: Some(graph),
        ..Default::default()
    }
    .encode_to_vec()
}

/// Nodes computing `zero_<name>` = 0 · Σ `name`, a `[1]` tensor.
fn zero_of(name: &str, rank: usize, nodes: &mut Vec<NodeProto>, init: &mut Vec<TensorProto>) -> String {
    let axes: Vec<i64> = (0..rank as i64).collect();
    let sum = format!("sum_{name}");
    let out = format!("zero_{name}");
    nodes.push(node(
        "ReduceSum",
        &[name],
        &sum,
        vec![ints("axes", &axes), int("keepdims", 0)],
    ));
    init.push(constant(&format!("k0_{name}"), &[1], vec![0.0]));
    nodes.push(node("Mul", &[&sum, &format!("k0_{name}")], &out, vec![]));
    out
}

/// A detector whose output `output` is the constant `rows`, shaped
/// `[1, rows.len(), row_len]`, for any `[1, 3, size, size]` input `images`.
///
/// With `transpose` the constant is emitted as `[1, row_len, rows.len()]`
/// (the raw YOLOv8 layout).
pub fn constant_detector(size: u32, rows: &[Vec<f32>], transpose: bool) -> Vec<u8> {
    let n = rows.len() as i64;
    let k = rows.first().map_or(6, Vec::len) as i64;
    let (dims, data) = if transpose {
        let mut d = Vec::with_capacity((n * k) as usize);
        for c in 0..k as usize {
            d.extend(rows.iter().map(|r| r[c]));
        }
        (vec![1, k, n], d)
    } else {
        (vec![1, n, k], rows.concat())
    };
    let mut nodes = Vec::new();
    let mut init = vec![constant("detections", &dims, data)];
    let zero = zero_of("images", 4, &mut nodes, &mut init);
    nodes.push(node("Add", &["detections", &zero], "output0", vec![]));
    let s = i64::from(size);
    model(GraphProto {
        name: "constant_detector".into(),
        node: nodes,
        initializer: init,
        input: vec![value_info("images", &[1, 3, s, s])],
        output: vec![value_info("output0", &dims)],
        ..Default::default()
    })
}

/// Encoder whose embedding is the input image itself.
pub fn identity_encoder(size: u32) -> Vec<u8> {
    let s = i64::from(size);
    model(GraphProto {
        name: "identity_encoder".into(),
        node: vec![node("Identity", &["images"], "image_embeddings", vec![])],
        input: vec![value_info("images", &[1, 3, s, s])],
        output: vec![value_info("image_embeddings", &[1, 3, s, s])],
        ..Default::default()
    })
}

/// Decoder returning logits `embedding[:, 0] - threshold` at input resolution,
/// i.e. positive where the first (brain) channel of the normalized input
/// exceeds `threshold`. Takes the SAM prompt-decoder input set.
pub fn channel_threshold_decoder(size: u32, max_points: usize, mask_input_size: u32, threshold: f32) -> Vec<u8> {
    let s = i64::from(size);
    let p = max_points as i64;
    let m = i64::from(mask_input_size);
    let mut nodes = Vec::new();
    let mut init = vec![
        constant("threshold", &[1], vec![threshold]),
        int64s("slice_starts", &[0]),
        int64s("slice_ends", &[1]),
        int64s("slice_axes", &[1]),
    ];
    nodes.push(node(
        "Slice",
        &["image_embeddings", "slice_starts", "slice_ends", "slice_axes"],
        "brain",
        vec![],
    ));
    nodes.push(node("Sub", &["brain", "threshold"], "logits0", vec![]));
    let mut acc = "logits0".to_string();
    for (name, rank) in [
        ("point_coords", 3),
        ("point_labels", 2),
        ("mask_input", 4),
        ("has_mask_input", 1),
        ("orig_im_size", 1),
    ] {
        let z = zero_of(name, rank, &mut nodes, &mut init);
        let next = format!("logits_{name}");
        nodes.push(node("Add", &[&acc, &z], &next, vec![]));
        acc = next;
    }
    nodes.push(node("Identity", &[&acc], "masks", vec![]));
    model(GraphProto {
        name: "channel_threshold_decoder".into(),
        node: nodes,
        initializer: init,
        input: vec![
            value_info("image_embeddings", &[1, 3, s, s]),
            value_info("point_coords", &[1, p, 2]),
            value_info("point_labels", &[1, p]),
            value_info("mask_input", &[1, 1, m, m]),
            value_info("has_mask_input", &[1]),
            value_info("orig_im_size", &[2]),
        ],
        output: vec![value_info("masks", &[1, 1, s, s])],
        ..Default::default()
    })
}

/// Writes `bytes` to `dir/name` and returns a checksummed reference.
pub fn write_graph(dir: &Path, name: &str, bytes: &[u8]) -> Result<GraphRef, InterchangeError> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|source| InterchangeError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(GraphRef {
        graph: name.into(),
        sha256: sha256_file(&path)?,
    })
}
