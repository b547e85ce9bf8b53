use super::{validate, ArchError, Architecture, Layer};

/// Parses a JSON architecture document and validates it.
///
/// Schema violations (unknown fields, wrong types, non-positive sizes) are
/// reported as [`ArchError::Parse`] with the path of the offending field;
/// shape problems as [`ArchError::Validation`].
pub fn parse_architecture(text: &str) -> Result<Architecture, ArchError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let arch: Architecture = serde_path_to_error::deserialize(de).map_err(|e| ArchError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    check_positive(&arch)?;
    let report = validate(&arch);
    if let Some(issue) = report.issues.first() {
        return Err(ArchError::Validation(issue.to_string()));
    }
    Ok(arch)
}

/// Pretty JSON with every defaulted field written out.
pub fn serialize_architecture(arch: &Architecture) -> String {
    serde_json::to_string_pretty(arch).expect("architecture is always serializable")
}

fn parse_err(path: String, message: &str) -> ArchError {
    ArchError::Parse { path, message: message.to_string() }
}

fn check_positive(arch: &Architecture) -> Result<(), ArchError> {
    let s = arch.input_shape;
    if s.channels == 0 || s.height == 0 || s.width == 0 {
        return Err(parse_err("input_shape".into(), "dimensions must be positive"));
    }
    for (i, block) in arch.blocks.iter().enumerate() {
        let prefix = format!("blocks[{i}]");
        check_layers(&block.layers, &format!("{prefix}.layers"))?;
        if let Some(pool) = &block.pool {
            if pool.window.contains(&0) || pool.stride.contains(&0) {
                return Err(parse_err(format!("{prefix}.pool"), "window and stride must be positive"));
            }
        }
    }
    for (i, d) in arch.classifier.dense.iter().enumerate() {
        if d.out_features == 0 {
            return Err(parse_err(
                format!("classifier.dense[{i}].out_features"),
                "must be positive",
            ));
        }
    }
    Ok(())
}

fn check_layers(layers: &[Layer], prefix: &str) -> Result<(), ArchError> {
    for (i, layer) in layers.iter().enumerate() {
        let at = format!("{prefix}[{i}]");
        match layer {
            Layer::Conv(c) => {
                if c.out_channels == 0 {
                    return Err(parse_err(format!("{at}.conv.out_channels"), "must be positive"));
                }
                if c.kernel.contains(&0) {
                    return Err(parse_err(format!("{at}.conv.kernel"), "must be positive"));
                }
                if c.stride.contains(&0) {
                    return Err(parse_err(format!("{at}.conv.stride"), "must be positive"));
                }
                if c.groups == 0 {
                    return Err(parse_err(format!("{at}.conv.groups"), "must be at least 1"));
                }
            }
            Layer::Pool(p) => {
                if p.window.contains(&0) || p.stride.contains(&0) {
                    return Err(parse_err(format!("{at}.pool"), "window and stride must be positive"));
                }
            }
            Layer::ChannelSlice { len, .. } => {
                if *len == 0 {
                    return Err(parse_err(format!("{at}.channel_slice.len"), "must be positive"));
                }
            }
            Layer::ResidualAdd(r) => {
                if let Some(p) = &r.projection {
                    if p.out_channels == 0 || p.stride.contains(&0) {
                        return Err(parse_err(
                            format!("{at}.residual_add.projection"),
                            "out_channels and stride must be positive",
                        ));
                    }
                }
            }
            Layer::Concat { branches } => {
                for (b, branch) in branches.iter().enumerate() {
                    check_layers(&branch.layers, &format!("{at}.concat.branches[{b}].layers"))?;
                }
            }
            Layer::Relu => {}
        }
    }
    Ok(())
}
