#pragma once

#include <istream>
#include <ostream>
#include <string>

#include "nbe/missingness.hpp"
#include "nbe/model.hpp"

namespace nbe {

/// Grid fields: header `row,col,value,observed`, one line per cell. Missing
/// cells have observed = 0 and value NA (any number is also accepted).
void write_grid_csv(std::ostream& out, const IncompleteField& field);
IncompleteField read_grid_csv(std::istream& in);

/// Row data ([T, d]): header `replicate,component,value`; NA marks a
/// missing entry. Every (replicate, component) pair must appear once.
void write_rows_csv(std::ostream& out, const IncompleteField& field);
IncompleteField read_rows_csv(std::istream& in);

/// Picks the format from model.iid_rows() and checks the field shape.
void write_field_file(const DataModel& model, const IncompleteField& field,
                      const std::string& path);
IncompleteField read_field_file(const DataModel& model, const std::string& path);

}  // namespace nbe
