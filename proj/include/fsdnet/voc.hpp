#pragma once

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsdnet/box.hpp"

namespace fsd {

struct VocObject {
  std::string name;  // "fire" or "smoke"
  int xmin = 0, ymin = 0, xmax = 0, ymax = 0;
};

struct VocAnnotation {
  std::string filename;
  int width = 0, height = 0, depth = 3;
  std::vector<VocObject> objects;
};

inline int class_id_from_name(const std::string& name) {
  for (int i = 0; i < kNumClasses; ++i)
    if (name == kClassNames[i]) return i;
  return -1;
}

inline void validate_annotation(const VocAnnotation& ann,
                                const std::string& context) {
  if (ann.width < 1 || ann.height < 1)
    throw std::runtime_error("voc: bad image size in " + context);
  for (size_t i = 0; i < ann.objects.size(); ++i) {
    const VocObject& o = ann.objects[i];
    std::ostringstream where;
    where << context << ", object " << i << " (" << o.name << ")";
    if (class_id_from_name(o.name) < 0)
      throw std::runtime_error("voc: unknown class in " + where.str());
    if (o.xmin < 0 || o.xmax <= o.xmin || o.xmax > ann.width ||
        o.ymin < 0 || o.ymax <= o.ymin || o.ymax > ann.height)
      throw std::runtime_error("voc: box out of range in " + where.str());
  }
}

// Tolerates unknown extra elements; rejects out-of-range boxes with file and
// object diagnostics.
inline VocAnnotation read_voc_xml(const std::string& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_xml(path, tree);
  } catch (const pt::xml_parser_error& e) {
    throw std::runtime_error("voc: cannot parse " + path + ": " + e.what());
  }
  VocAnnotation ann;
  try {
    const pt::ptree& root = tree.get_child("annotation");
    ann.filename = root.get<std::string>("filename", "");
    ann.width = root.get<int>("size.width");
    ann.height = root.get<int>("size.height");
    ann.depth = root.get<int>("size.depth", 3);
    for (const auto& [key, node] : root) {
      if (key != "object") continue;
      VocObject o;
      o.name = node.get<std::string>("name");
      o.xmin = node.get<int>("bndbox.xmin");
      o.ymin = node.get<int>("bndbox.ymin");
      o.xmax = node.get<int>("bndbox.xmax");
      o.ymax = node.get<int>("bndbox.ymax");
      ann.objects.push_back(o);
    }
  } catch (const pt::ptree_error& e) {
    throw std::runtime_error("voc: missing field in " + path + ": " + e.what());
  }
  validate_annotation(ann, path);
  return ann;
}

inline void write_voc_xml(const VocAnnotation& ann, const std::string& path) {
  validate_annotation(ann, path);
  namespace pt = boost::property_tree;
  pt::ptree root;
  root.put("filename", ann.filename);
  root.put("size.width", ann.width);
  root.put("size.height", ann.height);
  root.put("size.depth", ann.depth);
  for (const VocObject& o : ann.objects) {
    pt::ptree obj;
    obj.put("name", o.name);
    obj.put("bndbox.xmin", o.xmin);
    obj.put("bndbox.ymin", o.ymin);
    obj.put("bndbox.xmax", o.xmax);
    obj.put("bndbox.ymax", o.ymax);
    root.add_child("object", obj);
  }
  pt::ptree tree;
  tree.add_child("annotation", root);
  pt::write_xml(path, tree, std::locale(),
                pt::xml_writer_settings<std::string>(' ', 2));
}

// Pixel boxes to normalized center-size boxes.
inline std::vector<BBox> annotation_boxes(const VocAnnotation& ann) {
  std::vector<BBox> boxes;
  for (const VocObject& o : ann.objects) {
    BBox b;
    b.cx = (o.xmin + o.xmax) / 2.0 / ann.width;
    b.cy = (o.ymin + o.ymax) / 2.0 / ann.height;
    b.w = static_cast<double>(o.xmax - o.xmin) / ann.width;
    b.h = static_cast<double>(o.ymax - o.ymin) / ann.height;
    b.class_id = class_id_from_name(o.name);
    boxes.push_back(b);
  }
  return boxes;
}

}  // namespace fsd
